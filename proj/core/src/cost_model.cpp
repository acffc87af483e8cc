// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchpar/cost_model.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <ostream>

#include "branchpar/errors.hpp"

namespace branchpar {

namespace {

constexpr std::array<std::string_view, 9> kSubOps = {
    "row_attn",     "col_attn",      "msa_transition", "opm",           "tri_mult_out",
    "tri_mult_in",  "tri_attn_start", "tri_attn_end",  "pair_transition",
};

// Forward launches of each sub-op as executed by the tensor engine.
constexpr std::array<std::int64_t, 9> kLaunches = {24, 22, 4, 12, 18, 18, 23, 25, 4};

std::size_t sub_op_index(std::string_view name) {
  const auto it = std::find(kSubOps.begin(), kSubOps.end(), name);
  if (it == kSubOps.end()) throw ConfigError("unknown sub-op '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - kSubOps.begin());
}

// Gated attention over B sequences of N tokens with c input channels.
std::int64_t attention_flops(std::int64_t B, std::int64_t N, std::int64_t c, const EvoConfig& cfg) {
  const auto hd = cfg.h * cfg.c_head;
  const auto projections = 4 * 2 * B * N * c * hd;  // q, k, v, gate
  const auto scores = 2 * B * cfg.h * N * N * cfg.c_head;
  const auto mix = 2 * B * cfg.h * N * N * cfg.c_head;
  const auto out = 2 * B * N * hd * c;
  return projections + scores + mix + out;
}

std::int64_t tri_mult_flops(const EvoConfig& c) {
  const auto rr = c.r * c.r;
  return 4 * 2 * rr * c.c_z * c.c_opm      // gated a and b projections
         + 2 * c.c_opm * rr * c.r          // contraction over k
         + 2 * rr * c.c_z * c.c_z          // output gate
         + 2 * rr * c.c_opm * c.c_z;       // output projection
}

double ring_factor(CollectiveKind kind, int group_size) {
  const double p = group_size;
  switch (kind) {
    case CollectiveKind::allgather:
      return (p - 1.0) / p;
    case CollectiveKind::allreduce:
      return 2.0 * (p - 1.0) / p;
    case CollectiveKind::broadcast:
      return 1.0;
  }
  return 1.0;
}

// Time of the activation collectives in `entries`. Parameter synchronization
// is skipped: at scale it rides on the data-parallel gradient allreduce that
// the baseline pays as well.
double collective_time(std::span<const CommVolumeEntry> entries, int group_size, const DeviceModel& dev,
                       double recycle_factor, std::int64_t groups = 1) {
  double t = 0.0;
  for (const auto& e : entries) {
    if (e.phase == Phase::param) continue;
    const double repeats = e.phase == Phase::fwd ? recycle_factor : 1.0;
    const double collectives = static_cast<double>(e.collectives) / static_cast<double>(groups);
    const double bytes = static_cast<double>(e.elements) / static_cast<double>(groups) * dev.bytes_per_element;
    t += repeats * (collectives * dev.link_latency + ring_factor(e.kind, group_size) * bytes / dev.link_bandwidth);
  }
  return t;
}

struct PathWork {
  std::int64_t flops = 0;
  std::int64_t launches = 0;
};

PathWork path_work(const EvoConfig& cfg, std::optional<Branch> branch) {
  PathWork w{0, block_glue_launches()};
  for (const auto name : kSubOps) {
    if (branch && sub_op_branch(name) != *branch) continue;
    w.flops += op_flops(name, cfg);
    w.launches += op_launches(name);
  }
  return w;
}

double compute_time(const PathWork& w, const EvoConfig& cfg, int dap, const DeviceModel& dev, double recycle_factor) {
  const double passes = recycle_factor + 2.0;
  const double per_block = static_cast<double>(w.flops) / dap / dev.compute_rate +
                           static_cast<double>(w.launches) * dev.launch_overhead;
  return passes * static_cast<double>(cfg.n_blocks) * per_block;
}

}  // namespace

void DeviceModel::validate() const {
  auto check = [](double v, const char* name) {
    if (!(v > 0.0)) throw ConfigError(std::string("device.") + name + " must be positive");
  };
  check(compute_rate, "compute_rate");
  check(link_bandwidth, "link_bandwidth");
  check(link_latency, "link_latency");
  check(launch_overhead, "launch_overhead");
  check(non_evoformer_time, "non_evoformer_time");
  check(bytes_per_element, "bytes_per_element");
}

std::span<const std::string_view> sub_op_names() { return kSubOps; }

Branch sub_op_branch(std::string_view sub_op) { return sub_op_index(sub_op) < 4 ? Branch::msa : Branch::pair; }

std::int64_t op_flops(std::string_view sub_op, const EvoConfig& c) {
  const auto rr = c.r * c.r;
  switch (sub_op_index(sub_op)) {
    case 0:  // pair bias + attention along residues
      return 2 * rr * c.c_z * c.h + attention_flops(c.s, c.r, c.c_m, c);
    case 1:
      return attention_flops(c.r, c.s, c.c_m, c);
    case 2:
      return 4 * c.s * c.r * c.t_factor * c.c_m * c.c_m;
    case 3:
      return 2 * 2 * c.s * c.r * c.c_m * c.c_opm          // a and b projections
             + 2 * rr * c.c_opm * c.c_opm * c.s           // outer products
             + 2 * rr * c.c_opm * c.c_opm * c.c_z;        // output projection
    case 4:
    case 5:
      return tri_mult_flops(c);
    case 6:
    case 7:
      return 2 * rr * c.c_z * c.h + attention_flops(c.r, c.r, c.c_z, c);
    case 8:
      return 4 * rr * c.t_factor * c.c_z * c.c_z;
  }
  return 0;
}

std::int64_t op_launches(std::string_view sub_op) { return kLaunches[sub_op_index(sub_op)]; }

std::int64_t block_glue_launches() { return 12; }

std::int64_t block_flops(const EvoConfig& cfg) {
  std::int64_t total = 0;
  for (const auto name : kSubOps) total += op_flops(name, cfg);
  return total;
}

CostReport step_time(const EvoConfig& cfg, const ParallelLayout& layout, const DeviceModel& device,
                     double recycle_factor) {
  cfg.validate();
  layout.validate();
  device.validate();
  if (!(recycle_factor >= 1.0)) throw ConfigError("recycle factor must be at least 1");

  CostReport rep;
  rep.layout = layout;
  for (const auto name : kSubOps) rep.sub_ops.push_back({std::string(name), op_flops(name, cfg)});

  auto branch_path = [&](std::optional<Branch> branch, double& comm) {
    const auto dap_entries = dap_group_volume(cfg, layout.dap, branch);
    comm = collective_time(dap_entries, layout.dap, device, recycle_factor);
    return compute_time(path_work(cfg, branch), cfg, layout.dap, device, recycle_factor) + comm;
  };

  double evo = 0.0;
  double comm = 0.0;
  if (layout.bp == 1) {
    evo = branch_path(std::nullopt, comm);
  } else {
    double comm_msa = 0.0, comm_pair = 0.0;
    const double t_msa = branch_path(Branch::msa, comm_msa);
    const double t_pair = branch_path(Branch::pair, comm_pair);
    evo = std::max(t_msa, t_pair);
    comm = t_msa >= t_pair ? comm_msa : comm_pair;

    const auto bp_entries = expected_comm_volume(cfg, ParallelLayout{1, 2, 1});
    const double bp_comm = collective_time(bp_entries, 2, device, recycle_factor);
    evo += bp_comm;
    comm += bp_comm;
  }

  double dp_comm = 0.0;
  if (layout.dp > 1) {
    const auto entries = expected_comm_volume(cfg, ParallelLayout{layout.dp, 1, 1});
    const double bytes = static_cast<double>(total_elements(entries)) * device.bytes_per_element;
    dp_comm = device.link_latency + ring_factor(CollectiveKind::allreduce, layout.dp) * bytes / device.link_bandwidth;
  }

  rep.evoformer_time = evo;
  rep.other_time = device.non_evoformer_time;
  rep.comm_time = comm + dp_comm;
  rep.step_time = evo + device.non_evoformer_time + dp_comm;
  rep.evoformer_fraction = evo / (evo + device.non_evoformer_time);
  if (layout.bp > 1 || layout.dap > 1) {
    rep.speedup = step_time(cfg, ParallelLayout{layout.dp, 1, 1}, device, recycle_factor).step_time / rep.step_time;
  }
  return rep;
}

double evoformer_fraction(const EvoConfig& cfg, const DeviceModel& device, double recycle_factor) {
  return step_time(cfg, ParallelLayout{}, device, recycle_factor).evoformer_fraction;
}

double bp_ideal_speedup(double f) {
  if (!(f >= 0.0 && f <= 1.0)) throw ContractError("evoformer fraction must lie in [0, 1]");
  return 1.0 / (1.0 - f / 2.0);
}

std::vector<ScheduleBytes> schedule_bytes(const EvoConfig& cfg, const ParallelLayout& layout,
                                          double bytes_per_element) {
  std::vector<ScheduleBytes> out;
  for (const auto& e : expected_comm_volume(cfg, layout)) {
    const int group_size = e.schedule == GroupKind::dap ? layout.dap : e.schedule == GroupKind::bp ? layout.bp : layout.dp;
    const auto copies = static_cast<double>(e.elements) * static_cast<double>(group_size - 1);
    const auto bytes = static_cast<std::int64_t>(copies * bytes_per_element);
    if (!out.empty() && out.back().schedule == e.schedule && out.back().phase == e.phase) {
      out.back().bytes += bytes;
    } else {
      out.push_back({e.schedule, e.phase, bytes});
    }
  }
  return out;
}

std::vector<SpeedupRow> speedup_report(std::span<const CostPreset> presets, std::span<const ParallelLayout> layouts,
                                       double recycle_factor, std::int64_t global_batch) {
  std::vector<SpeedupRow> rows;
  for (const auto& preset : presets) {
    double baseline = 0.0;
    for (std::size_t i = 0; i < layouts.size(); ++i) {
      const auto rep = step_time(preset.cfg, layouts[i], preset.device, recycle_factor);
      if (i == 0) baseline = rep.step_time;
      std::int64_t bytes = 0;
      for (const auto& b : schedule_bytes(preset.cfg, layouts[i], preset.device.bytes_per_element)) bytes += b.bytes;
      rows.push_back({preset.name, layouts[i], rep.step_time, static_cast<double>(global_batch) / rep.step_time,
                      (baseline / rep.step_time - 1.0) * 100.0, rep.evoformer_fraction, bytes});
    }
  }
  return rows;
}

void write_speedup_csv(std::ostream& os, std::span<const SpeedupRow> rows) {
  os << "preset,layout,dp,bp,dap,s/step,protein/s,speedup%,evoformer_fraction,comm_bytes\n";
  for (const auto& r : rows) {
    os << r.preset << ',' << r.layout.name() << ',' << r.layout.dp << ',' << r.layout.bp << ',' << r.layout.dap << ','
       << r.step_time << ',' << r.proteins_per_second << ',' << r.gain_percent << ',' << r.evoformer_fraction << ','
       << r.comm_bytes << '\n';
  }
}

namespace {

EvoConfig production_shape(std::int64_t s, std::int64_t r) {
  EvoConfig c;
  c.s = s;
  c.r = r;
  c.c_m = 256;
  c.c_z = 128;
  c.h = 8;
  c.c_head = 32;
  c.c_opm = 32;
  c.t_factor = 4;
  c.n_blocks = 52;
  c.variant = Variant::parallel;
  return c;
}

}  // namespace

CostPreset initial_training_preset() {
  CostPreset p{"initial_training", production_shape(128, 256), DeviceModel{}};
  p.device.non_evoformer_time = 1.89;
  return p;
}

CostPreset fine_tuning_preset() {
  CostPreset p{"fine_tuning", production_shape(512, 384), DeviceModel{}};
  p.device.non_evoformer_time = 3.67;
  return p;
}

}  // namespace branchpar
