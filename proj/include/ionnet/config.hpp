#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "empirical.hpp"
#include "netsim.hpp"

namespace ionnet {

// Single JSON document describing a run. Frequencies are MHz before the 2pi,
// times in microseconds unless the key says otherwise.
struct RunConfig {
  NodeTableRow node_a = preset_row("nodeA"), node_b = preset_row("nodeB");
  int jitter_k_max = 6;
  double jitter_span = 3.0;
  double dt_ns = 0.5;
  double envelope_end_us = 50;
  double kernel_start_us = 5.5, kernel_end_us = 23, kernel_h_us = 0.25;
  restart_rule rule = restart_rule::exact;
  bool index_matched = true;
  std::vector<double> efficiencies; // empty: fit from the model
  SequenceConfig sequence{};
  std::vector<double> T_us;
  FidelityInputs fidelity{};
  std::uint64_t attempts = 13656928;
  loop_mode mode = loop_mode::herald;
  double bin_us = 0.5;
  std::uint64_t chunk = 1u << 16;
  int resamples = 200;
  int bell_sign = +1;
  std::uint64_t seed = 1;
  std::size_t envelope_stride = 20;
  // Classical link used by the start-of-block handshake.
  double link_m = installed_fiber_length, group_index = 1.468;
  double processing_a_us = 0, processing_b_us = 0, handshake_timeout_us = 1000;

  std::vector<double> T_list() const {
    std::vector<double> t;
    if (T_us.empty()) return default_T_sweep();
    for (double x : T_us) t.push_back(x * 1e-6);
    return t;
  }
  KernelGrid kernel_grid() const { return KernelGrid::span(kernel_start_us * 1e-6, kernel_end_us * 1e-6, kernel_h_us * 1e-6); }
  HandshakeConfig handshake_config() const {
    HandshakeConfig h = HandshakeConfig::fiber_link(link_m, group_index);
    h.processing_a = processing_a_us * 1e-6;
    h.processing_b = processing_b_us * 1e-6;
    h.timeout = handshake_timeout_us * 1e-6;
    return h;
  }
  VisibilityOptions visibility_options() const {
    VisibilityOptions o;
    o.record.dt = dt_ns * 1e-9;
    o.record.t_end = envelope_end_us * 1e-6;
    o.record.kgrid = kernel_grid();
    o.record.rule = rule;
    o.k_max = jitter_k_max;
    o.span_factor = jitter_span;
    return o;
  }
};

namespace detail {

inline void check_keys(const nlohmann::json &j, const std::set<std::string> &allowed, const std::string &where) {
  if (!j.is_object()) throw config_error(where + ": expected an object");
  for (const auto &[k, v] : j.items())
    if (!allowed.count(k)) throw config_error(where + ": unknown key '" + k + "'");
}

} // namespace detail

inline RunConfig config_from_json(const nlohmann::json &j) {
  RunConfig c;
  try {
    detail::check_keys(j, {"nodeA", "nodeB", "jitter", "grid", "detectors", "sequence", "T_us", "fidelity", "simulation",
                           "tomography", "link", "seed", "envelope_stride", "$schema", "comment"},
                       "config");
    if (j.contains("nodeA")) c.node_a = row_from_json(j["nodeA"], c.node_a);
    if (j.contains("nodeB")) c.node_b = row_from_json(j["nodeB"], c.node_b);
    if (j.contains("jitter")) {
      const auto &x = j["jitter"];
      detail::check_keys(x, {"k_max", "span"}, "jitter");
      c.jitter_k_max = x.value("k_max", c.jitter_k_max);
      c.jitter_span = x.value("span", c.jitter_span);
    }
    if (j.contains("grid")) {
      const auto &x = j["grid"];
      detail::check_keys(x, {"dt_ns", "envelope_end_us", "kernel_start_us", "kernel_end_us", "kernel_h_us", "restart"}, "grid");
      c.dt_ns = x.value("dt_ns", c.dt_ns);
      c.envelope_end_us = x.value("envelope_end_us", c.envelope_end_us);
      c.kernel_start_us = x.value("kernel_start_us", c.kernel_start_us);
      c.kernel_end_us = x.value("kernel_end_us", c.kernel_end_us);
      c.kernel_h_us = x.value("kernel_h_us", c.kernel_h_us);
      const std::string r = x.value("restart", std::string("exact"));
      if (r == "exact") c.rule = restart_rule::exact;
      else if (r == "shifted") c.rule = restart_rule::shifted;
      else throw config_error("grid.restart must be 'exact' or 'shifted'");
    }
    if (j.contains("detectors")) {
      const auto &x = j["detectors"];
      detail::check_keys(x, {"index_matched", "efficiencies"}, "detectors");
      c.index_matched = x.value("index_matched", c.index_matched);
      if (x.contains("efficiencies")) {
        c.efficiencies = x["efficiencies"].get<std::vector<double>>();
        if (c.efficiencies.size() != 4) throw config_error("detectors.efficiencies needs four values");
      }
    }
    if (j.contains("sequence")) {
      const auto &x = j["sequence"];
      detail::check_keys(x, {"iteration_us", "max_iterations", "window_us", "background_window_us", "initial_cooling_us",
                             "measurement_us", "max_sequence_us"},
                         "sequence");
      auto &s = c.sequence;
      s.iteration = x.value("iteration_us", s.iteration * 1e6) * 1e-6;
      s.max_iterations = x.value("max_iterations", s.max_iterations);
      if (x.contains("window_us")) {
        const auto w = x["window_us"].get<std::vector<double>>();
        if (w.size() != 2) throw config_error("sequence.window_us needs two values");
        s.window_start = w[0] * 1e-6;
        s.window_end = w[1] * 1e-6;
      }
      if (x.contains("background_window_us")) {
        const auto w = x["background_window_us"].get<std::vector<double>>();
        if (w.size() != 2) throw config_error("sequence.background_window_us needs two values");
        s.background_start = w[0] * 1e-6;
        s.background_end = w[1] * 1e-6;
      }
      s.initial_cooling = x.value("initial_cooling_us", s.initial_cooling * 1e6) * 1e-6;
      s.measurement = x.value("measurement_us", s.measurement * 1e6) * 1e-6;
      s.max_sequence = x.value("max_sequence_us", s.max_sequence * 1e6) * 1e-6;
    }
    if (j.contains("T_us")) c.T_us = j["T_us"].get<std::vector<double>>();
    if (j.contains("fidelity")) {
      const auto &x = j["fidelity"];
      detail::check_keys(x, {"f_ip_a", "f_ip_b", "phi"}, "fidelity");
      c.fidelity.f_ip_a = x.value("f_ip_a", c.fidelity.f_ip_a);
      c.fidelity.f_ip_b = x.value("f_ip_b", c.fidelity.f_ip_b);
      c.fidelity.phi = x.value("phi", c.fidelity.phi);
    }
    if (j.contains("simulation")) {
      const auto &x = j["simulation"];
      detail::check_keys(x, {"attempts", "mode", "bin_us", "chunk"}, "simulation");
      c.attempts = x.value("attempts", c.attempts);
      const std::string m = x.value("mode", std::string("herald"));
      if (m == "herald") c.mode = loop_mode::herald;
      else if (m == "calibration") c.mode = loop_mode::calibration;
      else throw config_error("simulation.mode must be 'herald' or 'calibration'");
      c.bin_us = x.value("bin_us", c.bin_us);
      c.chunk = x.value("chunk", c.chunk);
    }
    if (j.contains("tomography")) {
      const auto &x = j["tomography"];
      detail::check_keys(x, {"resamples", "sign"}, "tomography");
      c.resamples = x.value("resamples", c.resamples);
      c.bell_sign = x.value("sign", c.bell_sign);
      if (c.bell_sign != 1 && c.bell_sign != -1) throw config_error("tomography.sign must be +1 or -1");
    }
    if (j.contains("link")) {
      const auto &x = j["link"];
      detail::check_keys(x, {"length_m", "group_index", "processing_a_us", "processing_b_us", "timeout_us"}, "link");
      c.link_m = x.value("length_m", c.link_m);
      c.group_index = x.value("group_index", c.group_index);
      c.processing_a_us = x.value("processing_a_us", c.processing_a_us);
      c.processing_b_us = x.value("processing_b_us", c.processing_b_us);
      c.handshake_timeout_us = x.value("timeout_us", c.handshake_timeout_us);
    }
    c.seed = j.value("seed", c.seed);
    c.envelope_stride = j.value("envelope_stride", c.envelope_stride);
  } catch (const nlohmann::json::exception &e) {
    throw config_error(std::string("config: ") + e.what());
  }
  if (!(c.dt_ns > 0) || !(c.kernel_h_us > 0) || c.jitter_k_max < 0 || c.envelope_stride == 0 || c.chunk == 0 ||
      !(c.bin_us > 0) || c.resamples < 2)
    throw config_error("config: grid steps, bin, stride, chunk must be positive and resamples >= 2");
  return c;
}

inline nlohmann::json config_to_json(const RunConfig &c) {
  nlohmann::json j;
  j["nodeA"] = row_to_json(c.node_a);
  j["nodeB"] = row_to_json(c.node_b);
  j["jitter"] = {{"k_max", c.jitter_k_max}, {"span", c.jitter_span}};
  j["grid"] = {{"dt_ns", c.dt_ns},
               {"envelope_end_us", c.envelope_end_us},
               {"kernel_start_us", c.kernel_start_us},
               {"kernel_end_us", c.kernel_end_us},
               {"kernel_h_us", c.kernel_h_us},
               {"restart", c.rule == restart_rule::exact ? "exact" : "shifted"}};
  j["detectors"] = {{"index_matched", c.index_matched}};
  if (!c.efficiencies.empty()) j["detectors"]["efficiencies"] = c.efficiencies;
  const auto &s = c.sequence;
  j["sequence"] = {{"iteration_us", s.iteration * 1e6},
                   {"max_iterations", s.max_iterations},
                   {"window_us", {s.window_start * 1e6, s.window_end * 1e6}},
                   {"background_window_us", {s.background_start * 1e6, s.background_end * 1e6}},
                   {"initial_cooling_us", s.initial_cooling * 1e6},
                   {"measurement_us", s.measurement * 1e6},
                   {"max_sequence_us", s.max_sequence * 1e6}};
  if (!c.T_us.empty()) j["T_us"] = c.T_us;
  j["fidelity"] = {{"f_ip_a", c.fidelity.f_ip_a}, {"f_ip_b", c.fidelity.f_ip_b}, {"phi", c.fidelity.phi}};
  j["simulation"] = {{"attempts", c.attempts},
                     {"mode", c.mode == loop_mode::herald ? "herald" : "calibration"},
                     {"bin_us", c.bin_us},
                     {"chunk", c.chunk}};
  j["tomography"] = {{"resamples", c.resamples}, {"sign", c.bell_sign}};
  j["link"] = {{"length_m", c.link_m},
               {"group_index", c.group_index},
               {"processing_a_us", c.processing_a_us},
               {"processing_b_us", c.processing_b_us},
               {"timeout_us", c.handshake_timeout_us}};
  j["envelope_stride"] = c.envelope_stride;
  return j;
}

inline RunConfig load_config(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error &e) {
    throw config_error("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

namespace detail {

// Floats rounded to 12 significant digits, so unit conversions on a round trip
// through JSON do not change the hash.
inline nlohmann::json canonical(const nlohmann::json &j) {
  if (j.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", j.get<double>());
    return std::strtod(buf, nullptr);
  }
  if (j.is_array() || j.is_object()) {
    nlohmann::json out = j;
    for (auto it = out.begin(); it != out.end(); ++it) *it = canonical(*it);
    return out;
  }
  return j;
}

} // namespace detail

// FNV-1a over the canonical dump (object keys sorted), seed excluded.
inline std::uint64_t config_hash(const RunConfig &c) {
  const std::string s = detail::canonical(config_to_json(c)).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string artifact_header(const RunConfig &c) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "# config_hash=%016llx seed=%llu", static_cast<unsigned long long>(config_hash(c)),
                static_cast<unsigned long long>(c.seed));
  return buf;
}

inline DetectorTable detector_table(const RunConfig &c) {
  DetectorTable t = measured_detectors(c.index_matched);
  if (!c.efficiencies.empty())
    for (int r = 0; r < 4; ++r) t.det[r].efficiency = c.efficiencies[static_cast<std::size_t>(r)];
  return t;
}

struct ModelPair {
  PhotonRecord a, b;
  DetectorTable table;
};

// Photon records of both nodes for one visibility mode, and the detector table with
// efficiencies and path probabilities fitted to them.
inline ModelPair build_model(const RunConfig &c, visibility_mode m = visibility_mode::full) {
  const auto opt = c.visibility_options();
  ModelPair mp{mode_record(to_params(c.node_a), m, opt), mode_record(to_params(c.node_b), m, opt), detector_table(c)};
  const auto ka = average_kernels(mp.a.kernels, mp.a.ensemble.weights);
  const auto kb = average_kernels(mp.b.kernels, mp.b.ensemble.weights);
  const auto ea = photon_emission_probabilities(ka, mp.a.params), eb = photon_emission_probabilities(kb, mp.b.params);
  if (c.efficiencies.empty()) {
    mp.table = calibrate_efficiencies(mp.table, ea, eb);
  } else {
    // Efficiencies fixed by the config: only the per-node path probabilities are fitted.
    auto path = [&](const EmissionProbabilities &e, bool node_a) {
      double s = 0;
      for (const auto &d : mp.table.det) {
        const double em = 0.5 * (d.pol == polarization::v ? e.P_V : e.P_H);
        s += std::log((node_a ? d.p_A : d.p_B) / (d.efficiency * em));
      }
      const double q = std::exp(s / 4);
      return std::array<double, 2>{q, q};
    };
    mp.table.path_A = path(ea, true);
    mp.table.path_B = path(eb, false);
  }
  return mp;
}

} // namespace ionnet
