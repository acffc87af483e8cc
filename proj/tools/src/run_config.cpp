// Copyright (c) 2026, The branchpar Authors
// SPDX-License-Identifier: Apache-2.0

#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "branchpar/errors.hpp"

namespace branchpar::cli {

namespace {

using Setter = std::function<void(RunConfig&, std::string_view)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  std::string key;
  std::string help;
  Setter set;
  Getter get;
};

template <class T>
T parse_number(std::string_view text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw ConfigError("'" + std::string(text) + "' is not a valid number");
  return value;
}

template <class T>
std::string format_number(T value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

template <class T, class Section>
Field number(std::string key, std::string help, Section RunConfig::*section, T Section::*member) {
  return {std::move(key), std::move(help),
          [=](RunConfig& c, std::string_view v) { (c.*section).*member = parse_number<T>(v); },
          [=](const RunConfig& c) { return format_number((c.*section).*member); }};
}

Precision parse_precision(std::string_view v) {
  if (v == "f64") return Precision::f64;
  if (v == "f32") return Precision::f32;
  throw ConfigError("precision must be f64 or f32, got '" + std::string(v) + "'");
}

Mode parse_mode(std::string_view v) {
  if (v == "verify") return Mode::verify;
  if (v == "bench") return Mode::bench;
  throw ConfigError("mode must be verify or bench, got '" + std::string(v) + "'");
}

GradSync parse_grad_sync(std::string_view v) {
  if (v == "per_tensor") return GradSync::per_tensor;
  if (v == "fused") return GradSync::fused;
  throw ConfigError("grad_sync must be per_tensor or fused, got '" + std::string(v) + "'");
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using R = RunConfig;
    std::vector<Field> f;
    f.push_back(number("model.s", "MSA depth", &R::model, &EvoConfig::s));
    f.push_back(number("model.r", "residues", &R::model, &EvoConfig::r));
    f.push_back(number("model.c_m", "MSA channels", &R::model, &EvoConfig::c_m));
    f.push_back(number("model.c_z", "pair channels", &R::model, &EvoConfig::c_z));
    f.push_back(number("model.h", "attention heads", &R::model, &EvoConfig::h));
    f.push_back(number("model.c_head", "channels per head", &R::model, &EvoConfig::c_head));
    f.push_back(number("model.c_opm", "outer-product and triangle hidden channels", &R::model, &EvoConfig::c_opm));
    f.push_back(number("model.t_factor", "transition widening factor", &R::model, &EvoConfig::t_factor));
    f.push_back(number("model.n_blocks", "Evoformer blocks", &R::model, &EvoConfig::n_blocks));
    f.push_back({"model.variant", "block wiring: af2 | multimer | parallel",
                 [](R& c, std::string_view v) { c.model.variant = parse_variant(v); },
                 [](const R& c) { return std::string(to_string(c.model.variant)); }});
    f.push_back(number("layout.dp", "data-parallel replicas", &R::layout, &ParallelLayout::dp));
    f.push_back(number("layout.bp", "branch-parallel degree (1 or 2)", &R::layout, &ParallelLayout::bp));
    f.push_back(number("layout.dap", "axial-parallel degree (power of two)", &R::layout, &ParallelLayout::dap));
    f.push_back(number("device.compute_rate", "FLOP/s", &R::device, &DeviceModel::compute_rate));
    f.push_back(number("device.link_bandwidth", "bytes/s", &R::device, &DeviceModel::link_bandwidth));
    f.push_back(number("device.link_latency", "seconds per collective", &R::device, &DeviceModel::link_latency));
    f.push_back(number("device.launch_overhead", "seconds per operator launch", &R::device,
                       &DeviceModel::launch_overhead));
    f.push_back(number("device.non_evoformer_time", "seconds per step outside the Evoformer stack", &R::device,
                       &DeviceModel::non_evoformer_time));
    f.push_back(number("device.bytes_per_element", "wire width of one element", &R::device,
                       &DeviceModel::bytes_per_element));
    f.push_back(number("run.seed", "seed for parameters, inputs and sampled coordinates", &R::run,
                       &RunSection::seed));
    f.push_back({"run.precision", "f64 | f32",
                 [](R& c, std::string_view v) { c.run.precision = parse_precision(v); },
                 [](const R& c) { return std::string(c.run.precision == Precision::f64 ? "f64" : "f32"); }});
    f.push_back({"run.mode", "verify | bench; bench lets ranks run concurrently",
                 [](R& c, std::string_view v) { c.run.mode = parse_mode(v); },
                 [](const R& c) { return std::string(to_string(c.run.mode)); }});
    f.push_back(number("run.steps", "bench steps per layout, warmup included", &R::run, &RunSection::steps));
    f.push_back(number("run.warmup", "bench steps discarded before timing", &R::run, &RunSection::warmup));
    f.push_back(number("run.recycle_factor", "forward passes per step in the cost model", &R::run,
                       &RunSection::recycle_factor));
    f.push_back(number("run.global_batch", "samples per step in the cost model", &R::run, &RunSection::global_batch));
    f.push_back({"run.grad_sync", "per_tensor | fused",
                 [](R& c, std::string_view v) { c.run.grad_sync = parse_grad_sync(v); },
                 [](const R& c) {
                   return std::string(c.run.grad_sync == GradSync::per_tensor ? "per_tensor" : "fused");
                 }});
    return f;
  }();
  return table;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string_view to_string(Mode m) { return m == Mode::verify ? "verify" : "bench"; }

void RunConfig::validate() const {
  model.validate();
  if (model.n_blocks < 1) throw ConfigError("model.n_blocks must be at least 1");
  layout.validate(model);
  device.validate();
  if (run.steps < 1) throw ConfigError("run.steps must be at least 1");
  if (run.warmup < 0) throw ConfigError("run.warmup must not be negative");
  if (!(run.recycle_factor >= 1.0)) throw ConfigError("run.recycle_factor must be at least 1");
  if (run.global_batch < 1) throw ConfigError("run.global_batch must be at least 1");
}

RunConfig parse_config(std::istream& in, std::string_view source) {
  std::map<std::string, const Field*, std::less<>> by_key;
  for (const auto& f : fields()) by_key.emplace(f.key, &f);

  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view text = line;
    if (const auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
    text = trim(text);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) fail("expected 'key = value', got '" + std::string(text) + "'");
    const auto key = trim(text.substr(0, eq));
    const auto value = trim(text.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) fail("unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) fail("key '" + std::string(key) + "' given twice");
    if (value.empty()) fail("key '" + std::string(key) + "' has no value");
    try {
      it->second->set(cfg, value);
    } catch (const ConfigError& e) {
      fail(std::string(key) + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

void write_config(std::ostream& out, const RunConfig& cfg) {
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const auto this_section = f.key.substr(0, dot);
    if (this_section != section) {
      if (!section.empty()) out << '\n';
      section = this_section;
    }
    out << f.key << " = " << f.get(cfg) << '\n';
  }
}

std::vector<KeyDoc> config_keys() {
  const RunConfig defaults;
  std::vector<KeyDoc> out;
  for (const auto& f : fields()) out.push_back({f.key, f.get(defaults), f.help});
  return out;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  for (const auto& f : fields()) {
    if (f.get(a) != f.get(b)) return false;
  }
  return true;
}

}  // namespace branchpar::cli
