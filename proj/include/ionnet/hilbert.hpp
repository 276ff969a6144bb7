#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace ionnet {

using cd = std::complex<double>;
using Matrix6cd = Eigen::Matrix<cd, 6, 6>;
using Vector6cd = Eigen::Matrix<cd, 6, 1>;

inline constexpr double two_pi = 2.0 * std::numbers::pi;
// Table values are quoted in MHz before the 2pi.
inline constexpr double mhz = two_pi * 1e6;

// Shared basis order. The first four levels form the emitting manifold.
enum level : int { S0 = 0, P0 = 1, D1 = 2, Dp1 = 3, D0 = 4, Dp0 = 5 };
inline constexpr int n_levels = 6;
inline constexpr int n_restricted = 4;

struct NodeParams {
  double omega1 = 0, omega2 = 0;
  double g1 = 0, g2 = 0;
  double delta1 = 0, delta2 = 0; // calibrated detunings (primed)
  double deltac1 = 0, deltac2 = 0;
  double kappa = 0;
  double gamma_sp = 0, gamma_dp = 0, gamma_dprime_p = 0;
  double gamma_ss = 0;
  double gamma_clj = 0;
  double eta = 0;
  double pulse_duration = 50e-6;

  void validate(bool emitting = false) const {
    const double rates[] = {kappa, gamma_sp, gamma_dp, gamma_dprime_p,
                            gamma_ss, gamma_clj, eta, pulse_duration};
    for (double r : rates)
      if (!(r >= 0) || !std::isfinite(r))
        throw domain_error("node parameters: rates and efficiencies must be finite and nonnegative");
    if (eta > 1) throw domain_error("node parameters: eta must not exceed 1");
    if (emitting && !(kappa > 0)) throw domain_error("node parameters: kappa must be positive for emission");
  }
};

inline double stark_shift(const NodeParams &p) {
  if (p.delta1 == 0 || p.delta2 == 0) throw domain_error("stark_shift: zero laser detuning");
  return p.omega1 * p.omega1 / (4 * p.delta1) + p.omega2 * p.omega2 / (4 * p.delta2);
}

// Angular frequency of the bichromatic beat; zero when the drive is monochromatic.
inline double beat_frequency(const NodeParams &p) {
  if (p.omega2 == 0) return 0;
  return p.delta2 - p.delta1;
}

// A jump operator with a single nonzero element sqrt(rate_factor) |to><from|.
struct NoiseOp {
  std::string label;
  int to, from;
  double rate; // gamma, the operator prefactor is sqrt(2 gamma)
  double amplitude() const { return std::sqrt(2 * rate); }
  Matrix6cd matrix() const {
    Matrix6cd m = Matrix6cd::Zero();
    m(to, from) = amplitude();
    return m;
  }
};

struct OperatorSet {
  NodeParams p;
  double delta_omega = 0;
  double abs_shift = 0;
  std::array<NoiseOp, 6> noise_ops;

  // Drive on for t in [0, pulse_duration).
  bool pulse_on(double t) const { return t >= 0 && t < p.pulse_duration; }

  Matrix6cd hamiltonian_at(double t) const { return hamiltonian_at(t, pulse_on(t)); }

  Matrix6cd hamiltonian_at(double t, bool drive) const {
    Matrix6cd h = Matrix6cd::Zero();
    const double e_d = p.deltac1 + delta_omega - p.delta1 - abs_shift;
    const double e_dp = p.deltac2 + delta_omega - p.delta1 - abs_shift;
    h(P0, P0) = -(p.delta1 + abs_shift);
    h(D1, D1) = e_d;
    h(Dp1, Dp1) = e_dp;
    h(D0, D0) = e_d;
    h(Dp0, Dp0) = e_dp;
    h(P0, D1) = h(D1, P0) = p.g1;
    h(P0, Dp1) = h(Dp1, P0) = p.g2;
    if (drive) {
      const double w = beat_frequency(p);
      const cd c = 0.5 * (p.omega1 + p.omega2 * std::exp(cd(0, w * t)));
      h(S0, P0) = c;
      h(P0, S0) = std::conj(c);
    }
    return h;
  }

  // Sum of L^dagger L over all six channels; diagonal.
  Eigen::Matrix<double, 6, 1> loss_diagonal() const {
    Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
    for (const auto &op : noise_ops) d(op.from) += 2 * op.rate;
    return d;
  }
};

inline OperatorSet build_operators(const NodeParams &p, double delta_omega = 0) {
  p.validate();
  OperatorSet ops;
  ops.p = p;
  ops.delta_omega = delta_omega;
  ops.abs_shift = std::abs(stark_shift(p));
  ops.noise_ops = {NoiseOp{"sp", S0, P0, p.gamma_sp},
                   NoiseOp{"ss", S0, S0, p.gamma_ss},
                   NoiseOp{"dp", D0, P0, p.gamma_dp},
                   NoiseOp{"d'p", Dp0, P0, p.gamma_dprime_p},
                   NoiseOp{"4", D0, D1, p.kappa},
                   NoiseOp{"5", Dp0, Dp1, p.kappa}};
  return ops;
}

// One row of the node parameter table, in MHz before 2pi.
struct NodeTableRow {
  std::string name;
  double omega1 = 0, omega2 = 0;
  double g = 0;
  double g_weight1 = 1.0, g_weight2 = 1.0;
  double delta1 = 0, delta2 = 0;
  bool detunings_primed = true;
  // Default: Raman resonance, D1 and D'1 degenerate with the light-shifted S level.
  bool cavity_resonant = true;
  double deltac1 = 0, deltac2 = 0;
  double kappa = 0;
  double gamma_sp = 0;
  double gamma_dp_sum = 0;
  double dp_fraction = 0.5;
  double gamma_ss = 0;
  double gamma_clj = 0;
  double eta = 0;
  double pulse_us = 50;
};

inline NodeParams to_params(const NodeTableRow &r) {
  NodeParams p;
  p.omega1 = r.omega1 * mhz;
  p.omega2 = r.omega2 * mhz;
  p.g1 = r.g * r.g_weight1 * mhz;
  p.g2 = r.g * r.g_weight2 * mhz;
  p.delta1 = r.delta1 * mhz;
  p.delta2 = r.delta2 * mhz;
  if (!r.detunings_primed) {
    const double s = std::abs(stark_shift(p));
    p.delta1 -= s;
    p.delta2 -= s;
  }
  const double s = std::abs(stark_shift(p));
  if (r.cavity_resonant) {
    p.deltac1 = p.delta1 + 2 * s;
    p.deltac2 = p.delta2 + 2 * s;
  } else {
    p.deltac1 = r.deltac1 * mhz;
    p.deltac2 = r.deltac2 * mhz;
  }
  p.kappa = r.kappa * mhz;
  p.gamma_sp = r.gamma_sp * mhz;
  if (r.dp_fraction < 0 || r.dp_fraction > 1) throw domain_error("dp_fraction must lie in [0, 1]");
  p.gamma_dp = r.gamma_dp_sum * r.dp_fraction * mhz;
  p.gamma_dprime_p = r.gamma_dp_sum * (1 - r.dp_fraction) * mhz;
  p.gamma_ss = r.gamma_ss * mhz;
  p.gamma_clj = r.gamma_clj * mhz;
  p.eta = r.eta;
  p.pulse_duration = r.pulse_us * 1e-6;
  p.validate();
  return p;
}

// Coupling weights from the Clebsch-Gordan factors of the two emission lines
// times the projection onto the cavity polarization.
inline constexpr double cg_weight_d = 0.5773502691896258;  // sqrt(1/3)
inline constexpr double cg_weight_dp = 0.5163977794943222; // sqrt(4/15)

inline NodeTableRow preset_row(const std::string &name) {
  NodeTableRow r;
  r.name = name;
  r.g_weight1 = cg_weight_d;
  r.g_weight2 = cg_weight_dp;
  r.gamma_sp = 10.74;
  r.gamma_dp_sum = 0.75;
  if (name == "nodeA") {
    r.omega1 = 43.8;
    r.omega2 = 30.9;
    r.g = 0.77;
    r.delta1 = 412.8206;
    r.delta2 = 419.8574;
    r.kappa = 0.0684;
    r.gamma_ss = 0.01;
    r.gamma_clj = 0.06;
    r.eta = 0.069;
  } else if (name == "nodeB") {
    r.omega1 = 24.76;
    r.omega2 = 21.05;
    r.g = 1.2;
    r.delta1 = 414.0917;
    r.delta2 = 421.2091;
    r.kappa = 0.07;
    r.gamma_ss = 0;
    r.gamma_clj = 0;
    r.eta = 0.095;
  } else {
    throw missing_preset_error("unknown node preset '" + name + "'");
  }
  return r;
}

inline NodeParams preset(const std::string &name) { return to_params(preset_row(name)); }

inline NodeTableRow row_from_json(const nlohmann::json &j, NodeTableRow r = {}) {
  static const char *known[] = {"preset", "name", "Omega1", "Omega2", "g", "g_weight1", "g_weight2",
                                "Delta1", "Delta2", "detunings_primed", "Deltac1", "Deltac2", "kappa",
                                "gamma_sp", "gamma_dp_sum", "dp_fraction", "gamma_ss", "gamma_clj", "eta",
                                "pulse_us", "$schema", "comment"};
  if (!j.is_object()) throw config_error("node config: expected an object");
  for (const auto &[k, v] : j.items())
    if (std::find_if(std::begin(known), std::end(known), [&](const char *x) { return k == x; }) == std::end(known))
      throw config_error("node config: unknown key '" + k + "'");
  try {
    if (j.contains("preset")) r = preset_row(j.at("preset").get<std::string>());
    auto get = [&](const char *key, double &dst) {
      if (j.contains(key)) dst = j.at(key).get<double>();
    };
    if (j.contains("name")) r.name = j.at("name").get<std::string>();
    get("Omega1", r.omega1);
    get("Omega2", r.omega2);
    get("g", r.g);
    get("g_weight1", r.g_weight1);
    get("g_weight2", r.g_weight2);
    get("Delta1", r.delta1);
    get("Delta2", r.delta2);
    if (j.contains("detunings_primed")) r.detunings_primed = j.at("detunings_primed").get<bool>();
    if (j.contains("Deltac1") || j.contains("Deltac2")) {
      if (!j.contains("Deltac1") || !j.contains("Deltac2"))
        throw config_error("node config: Deltac1 and Deltac2 must be given together");
      r.cavity_resonant = false;
      get("Deltac1", r.deltac1);
      get("Deltac2", r.deltac2);
    }
    get("kappa", r.kappa);
    get("gamma_sp", r.gamma_sp);
    get("gamma_dp_sum", r.gamma_dp_sum);
    get("dp_fraction", r.dp_fraction);
    get("gamma_ss", r.gamma_ss);
    get("gamma_clj", r.gamma_clj);
    get("eta", r.eta);
    get("pulse_us", r.pulse_us);
  } catch (const nlohmann::json::exception &e) {
    throw config_error(std::string("node config: ") + e.what());
  }
  return r;
}

inline nlohmann::json row_to_json(const NodeTableRow &r) {
  nlohmann::json j = {{"name", r.name},
                      {"Omega1", r.omega1},
                      {"Omega2", r.omega2},
                      {"g", r.g},
                      {"g_weight1", r.g_weight1},
                      {"g_weight2", r.g_weight2},
                      {"Delta1", r.delta1},
                      {"Delta2", r.delta2},
                      {"detunings_primed", r.detunings_primed},
                      {"kappa", r.kappa},
                      {"gamma_sp", r.gamma_sp},
                      {"gamma_dp_sum", r.gamma_dp_sum},
                      {"dp_fraction", r.dp_fraction},
                      {"gamma_ss", r.gamma_ss},
                      {"gamma_clj", r.gamma_clj},
                      {"eta", r.eta},
                      {"pulse_us", r.pulse_us}};
  if (!r.cavity_resonant) {
    j["Deltac1"] = r.deltac1;
    j["Deltac2"] = r.deltac2;
  }
  return j;
}

} // namespace ionnet
