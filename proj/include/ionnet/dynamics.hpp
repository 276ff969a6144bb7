#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include "hilbert.hpp"
#include "integrator.hpp"

namespace ionnet {

inline constexpr double default_dt = 0.5e-9;

struct TimeGrid {
  double t_start = 0, t_end = 0, dt = 0;
  std::size_t n_steps = 0;

  double t(std::size_t i) const { return t_start + static_cast<double>(i) * dt; }
  std::size_t size() const { return n_steps + 1; }
  // Index of the grid point nearest to time x, clamped to the grid.
  std::size_t index_of(double x) const {
    const double k = std::round((x - t_start) / dt);
    if (k <= 0) return 0;
    return std::min<std::size_t>(static_cast<std::size_t>(k), n_steps);
  }

  static TimeGrid uniform(double t_start, double t_end, double dt) {
    if (!(dt > 0) || !(t_end > t_start)) throw domain_error("time grid: need dt > 0 and t_end > t_start");
    TimeGrid g;
    g.t_start = t_start;
    g.dt = dt;
    g.n_steps = static_cast<std::size_t>(std::llround((t_end - t_start) / dt));
    if (g.n_steps == 0) g.n_steps = 1;
    g.t_end = t_start + static_cast<double>(g.n_steps) * dt;
    return g;
  }
};

// Steps per beat period for a target step size; 1 when the drive is time independent.
inline std::size_t steps_per_beat(const NodeParams &p, double dt_target) {
  const double w = std::abs(beat_frequency(p));
  if (w == 0) return 1;
  const double tau = two_pi / w;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(tau / dt_target)));
}

// Grid whose step divides the beat period exactly, so step propagators repeat.
inline TimeGrid beat_grid(const NodeParams &p, double t_end, double dt_target = default_dt, double t_start = 0) {
  const double w = std::abs(beat_frequency(p));
  if (w == 0) return TimeGrid::uniform(t_start, t_end, dt_target);
  const double tau = two_pi / w;
  return TimeGrid::uniform(t_start, t_end, tau / static_cast<double>(steps_per_beat(p, dt_target)));
}

struct Trajectory {
  TimeGrid grid;
  std::vector<MatrixXcd> states;
};

// Lindblad generator on row-major vec(rho): vec(A rho B) = kron(A, B^T) vec(rho).
// `recycled` jumps contribute L rho L^dagger; `gamma` is the full sum of L^dagger L.
inline MatrixXcd liouvillian(const MatrixXcd &h, const std::vector<MatrixXcd> &recycled, const MatrixXcd &gamma) {
  const auto n = h.rows();
  const MatrixXcd id = MatrixXcd::Identity(n, n);
  const cd i(0, 1);
  MatrixXcd l = -i * (Eigen::kroneckerProduct(h, id).eval() - Eigen::kroneckerProduct(id, h.transpose()).eval());
  for (const auto &j : recycled) l += Eigen::kroneckerProduct(j, j.conjugate()).eval();
  l -= 0.5 * (Eigen::kroneckerProduct(gamma, id).eval() + Eigen::kroneckerProduct(id, gamma.transpose()).eval());
  return l;
}

namespace detail {

inline MatrixXcd loss_matrix(const OperatorSet &ops, int dim) {
  const auto d = ops.loss_diagonal();
  MatrixXcd g = MatrixXcd::Zero(dim, dim);
  for (int k = 0; k < dim; ++k) g(k, k) = d(k);
  return g;
}

inline StepPropagators restricted_steps(const OperatorSet &ops, const TimeGrid &grid) {
  std::vector<MatrixXcd> recycled;
  for (const auto &op : ops.noise_ops)
    if (op.to < n_restricted && op.from < n_restricted && op.rate > 0)
      recycled.push_back(op.matrix().topLeftCorner(n_restricted, n_restricted));
  const MatrixXcd gamma = loss_matrix(ops, n_restricted);
  auto gen = [ops, recycled, gamma](double t, bool on) {
    const MatrixXcd h = ops.hamiltonian_at(t, on).topLeftCorner(n_restricted, n_restricted);
    return liouvillian(h, recycled, gamma);
  };
  return StepPropagators(gen, grid.t_start, grid.dt, steps_per_beat(ops.p, grid.dt), ops.p.pulse_duration);
}

inline StepPropagators full_steps(const OperatorSet &ops, const TimeGrid &grid) {
  std::vector<MatrixXcd> recycled;
  for (const auto &op : ops.noise_ops)
    if (op.rate > 0) recycled.push_back(op.matrix());
  const MatrixXcd gamma = loss_matrix(ops, n_levels);
  auto gen = [ops, recycled, gamma](double t, bool on) {
    return liouvillian(ops.hamiltonian_at(t, on), recycled, gamma);
  };
  return StepPropagators(gen, grid.t_start, grid.dt, steps_per_beat(ops.p, grid.dt), ops.p.pulse_duration);
}

inline double vec_trace(const Eigen::VectorXcd &v, int dim) {
  double s = 0;
  for (int k = 0; k < dim; ++k) s += v(k * dim + k).real();
  return s;
}

inline MatrixXcd unvec(const Eigen::VectorXcd &v, int dim) {
  MatrixXcd m(dim, dim);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) m(r, c) = v(r * dim + c);
  return m;
}

inline void check_grid_multiple(const OperatorSet &ops, const TimeGrid &grid) {
  const double w = std::abs(beat_frequency(ops.p));
  if (w == 0) return;
  const double m = two_pi / w / grid.dt;
  if (std::abs(m - std::round(m)) > 1e-6 * m)
    throw integrator_error("time step must divide the beat period; build the grid with beat_grid()");
}

} // namespace detail

using state_observer = std::function<void(std::size_t, const Eigen::VectorXcd &)>;

// Restricted four-level evolution from |S,0>; observer sees vec(rho) at each grid point.
inline void evolve_restricted(const NodeParams &p, const TimeGrid &grid, double delta_omega,
                              const state_observer &observe) {
  const auto ops = build_operators(p, delta_omega);
  detail::check_grid_multiple(ops, grid);
  auto steps = detail::restricted_steps(ops, grid);
  constexpr int d = n_restricted;
  Eigen::VectorXcd r = Eigen::VectorXcd::Zero(d * d);
  r(S0 * d + S0) = 1;
  double tr = 1;
  observe(0, r);
  for (std::size_t n = 0; n < grid.n_steps; ++n) {
    r = steps(n) * r;
    const double tr_new = detail::vec_trace(r, d);
    if (tr_new > tr + 1e-6) throw integrator_error("restricted evolution: trace increased, step size unstable");
    tr = tr_new;
    observe(n + 1, r);
  }
}

inline Trajectory evolve_restricted(const NodeParams &p, const TimeGrid &grid, double delta_omega = 0) {
  Trajectory tr{grid, {}};
  tr.states.reserve(grid.size());
  evolve_restricted(p, grid, delta_omega,
                    [&](std::size_t, const Eigen::VectorXcd &v) { tr.states.push_back(detail::unvec(v, n_restricted)); });
  return tr;
}

inline void evolve_full(const NodeParams &p, const TimeGrid &grid, double delta_omega, const state_observer &observe) {
  const auto ops = build_operators(p, delta_omega);
  detail::check_grid_multiple(ops, grid);
  auto steps = detail::full_steps(ops, grid);
  constexpr int d = n_levels;
  Eigen::VectorXcd r = Eigen::VectorXcd::Zero(d * d);
  r(S0 * d + S0) = 1;
  observe(0, r);
  double tr = 1;
  for (std::size_t n = 0; n < grid.n_steps; ++n) {
    r = steps(n) * r;
    const double tr_new = detail::vec_trace(r, d);
    if (std::abs(tr_new - tr) > 1e-8) throw integrator_error("full evolution: trace not preserved");
    tr = tr_new;
    observe(n + 1, r);
  }
}

inline Trajectory evolve_full(const NodeParams &p, const TimeGrid &grid, double delta_omega = 0) {
  Trajectory tr{grid, {}};
  tr.states.reserve(grid.size());
  evolve_full(p, grid, delta_omega,
              [&](std::size_t, const Eigen::VectorXcd &v) { tr.states.push_back(detail::unvec(v, n_levels)); });
  return tr;
}

struct Envelopes {
  std::vector<double> p_v, p_h;
};

inline Envelopes photon_envelopes(const Trajectory &traj, const NodeParams &p) {
  Envelopes e;
  e.p_v.reserve(traj.states.size());
  e.p_h.reserve(traj.states.size());
  for (const auto &s : traj.states) {
    e.p_v.push_back(std::max(0.0, 2 * p.kappa * s(D1, D1).real()));
    e.p_h.push_back(std::max(0.0, 2 * p.kappa * s(Dp1, Dp1).real()));
  }
  return e;
}

inline std::vector<double> scattering_rate(const Trajectory &traj, const NodeParams &p) {
  std::vector<double> ps;
  ps.reserve(traj.states.size());
  for (const auto &s : traj.states)
    ps.push_back(std::max(0.0, 2 * p.gamma_sp * s(P0, P0).real() + 2 * p.gamma_ss * s(S0, S0).real()));
  return ps;
}

// Envelopes, scattering rate and trace of the restricted evolution without storing states.
struct EmissionCurves {
  TimeGrid grid;
  std::vector<double> p_v, p_h, P_s, trace;
};

inline EmissionCurves emission_curves(const NodeParams &p, const TimeGrid &grid, double delta_omega = 0) {
  EmissionCurves c{grid, {}, {}, {}, {}};
  constexpr int d = n_restricted;
  for (auto *v : {&c.p_v, &c.p_h, &c.P_s, &c.trace}) v->reserve(grid.size());
  evolve_restricted(p, grid, delta_omega, [&](std::size_t, const Eigen::VectorXcd &r) {
    c.p_v.push_back(std::max(0.0, 2 * p.kappa * r(D1 * d + D1).real()));
    c.p_h.push_back(std::max(0.0, 2 * p.kappa * r(Dp1 * d + Dp1).real()));
    c.P_s.push_back(std::max(0.0, 2 * p.gamma_sp * r(P0 * d + P0).real() + 2 * p.gamma_ss * r(S0 * d + S0).real()));
    c.trace.push_back(detail::vec_trace(r, d));
  });
  return c;
}

// Trapezoid integral of samples on the grid, restricted to [a, b].
inline double integrate(const TimeGrid &g, const std::vector<double> &f, double a = -INFINITY, double b = INFINITY) {
  double s = 0;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) {
    const double t0 = g.t(i), t1 = g.t(i + 1);
    const double lo = std::max(a, t0), hi = std::min(b, t1);
    if (hi <= lo) continue;
    const double u0 = (lo - t0) / g.dt, u1 = (hi - t0) / g.dt;
    const double f0 = f[i] + (f[i + 1] - f[i]) * u0, f1 = f[i] + (f[i + 1] - f[i]) * u1;
    s += 0.5 * (f0 + f1) * (hi - lo);
  }
  return s;
}

// Mean number of S<->P scattering events during the drive pulse.
inline double scattering_events(const EmissionCurves &c, const NodeParams &p) {
  return integrate(c.grid, c.P_s, 0.0, p.pulse_duration);
}

struct JitterEnsemble {
  int k_max = 0;
  std::vector<double> offsets, weights;
  std::size_t size() const { return offsets.size(); }
};

inline JitterEnsemble jitter_ensemble(double gamma_clj, int k_max, double span_factor = 3.0) {
  if (gamma_clj < 0 || k_max < 0) throw domain_error("jitter_ensemble: need gamma_clj >= 0 and k_max >= 0");
  JitterEnsemble e;
  if (gamma_clj == 0 || k_max == 0) {
    e.offsets = {0.0};
    e.weights = {1.0};
    return e;
  }
  e.k_max = k_max;
  const double step = span_factor * gamma_clj / k_max;
  double total = 0;
  for (int k = -k_max; k <= k_max; ++k) {
    const double w = k * step;
    e.offsets.push_back(w);
    e.weights.push_back(std::exp(-w * w / (2 * gamma_clj * gamma_clj)));
    total += e.weights.back();
  }
  for (auto &w : e.weights) w /= total;
  // Enforce exact mirror symmetry after rounding.
  for (int k = 0; k < k_max; ++k) e.weights[2 * k_max - k] = e.weights[k];
  return e;
}

inline EmissionCurves averaged_envelopes(const NodeParams &p, const TimeGrid &grid, const JitterEnsemble &ens) {
  EmissionCurves avg;
  for (std::size_t k = 0; k < ens.size(); ++k) {
    auto c = emission_curves(p, grid, ens.offsets[k]);
    if (k == 0) {
      avg = c;
      for (auto *v : {&avg.p_v, &avg.p_h, &avg.P_s, &avg.trace})
        for (auto &x : *v) x *= ens.weights[0];
      continue;
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
      avg.p_v[i] += ens.weights[k] * c.p_v[i];
      avg.p_h[i] += ens.weights[k] * c.p_h[i];
      avg.P_s[i] += ens.weights[k] * c.P_s[i];
      avg.trace[i] += ens.weights[k] * c.trace[i];
    }
  }
  return avg;
}

// CSV rows at every `stride`-th grid point.
inline void write_envelope_csv(std::ostream &os, const EmissionCurves &c, std::size_t stride = 1) {
  os << "t_us,p_v,p_h,P_s\n";
  os.precision(10);
  for (std::size_t i = 0; i < c.grid.size(); i += stride)
    os << c.grid.t(i) * 1e6 << ',' << c.p_v[i] << ',' << c.p_h[i] << ',' << c.P_s[i] << '\n';
}

} // namespace ionnet
