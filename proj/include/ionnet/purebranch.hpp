#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "dynamics.hpp"

namespace ionnet {

using Vector4cd = Eigen::Matrix<cd, 4, 1>;
using Matrix4cd = Eigen::Matrix<cd, 4, 4>;

struct PureTrajectory {
  TimeGrid grid;
  std::vector<Vector4cd> psi;
};

namespace detail {

// Generator -D = -iH - (1/2) sum L^dagger L on the four-level manifold.
inline StepPropagators no_noise_steps(const OperatorSet &ops, const TimeGrid &grid) {
  const auto loss = ops.loss_diagonal();
  auto gen = [ops, loss](double t, bool on) {
    MatrixXcd d = -cd(0, 1) * ops.hamiltonian_at(t, on).topLeftCorner(n_restricted, n_restricted);
    for (int k = 0; k < n_restricted; ++k) d(k, k) -= 0.5 * loss(k);
    return d;
  };
  return StepPropagators(gen, grid.t_start, grid.dt, steps_per_beat(ops.p, grid.dt), ops.p.pulse_duration);
}

inline double emission_phase_rate(const OperatorSet &ops, bool vertical) {
  const double dc = vertical ? ops.p.deltac1 : ops.p.deltac2;
  return dc + ops.delta_omega - ops.p.delta1 - ops.abs_shift;
}

} // namespace detail

// No-jump branch from |S,0> (or `start`) at grid.t_start.
inline PureTrajectory propagate_no_noise(const NodeParams &p, const TimeGrid &grid, double delta_omega = 0,
                                         Vector4cd start = Vector4cd::Unit(S0)) {
  const auto ops = build_operators(p, delta_omega);
  detail::check_grid_multiple(ops, grid);
  auto steps = detail::no_noise_steps(ops, grid);
  PureTrajectory tr{grid, {}};
  tr.psi.reserve(grid.size());
  Vector4cd v = start;
  tr.psi.push_back(v);
  double norm = v.squaredNorm();
  for (std::size_t n = 0; n < grid.n_steps; ++n) {
    v = steps(n) * v;
    const double nn = v.squaredNorm();
    if (nn > norm + 1e-8) throw integrator_error("no-noise branch: norm increased");
    norm = nn;
    tr.psi.push_back(v);
  }
  return tr;
}

// Emission amplitudes under the start-time-shift rule
// alpha(t|s) = exp(i s theta_v) alpha(t - s|0).
struct AmplitudeTable {
  TimeGrid grid;
  std::vector<cd> alpha0, beta0;
  double theta_v = 0, theta_h = 0;

  cd alpha(std::size_t nt, std::size_t ns) const { return shifted(alpha0, theta_v, nt, ns); }
  cd beta(std::size_t nt, std::size_t ns) const { return shifted(beta0, theta_h, nt, ns); }

private:
  cd shifted(const std::vector<cd> &a, double theta, std::size_t nt, std::size_t ns) const {
    if (nt < ns) return 0;
    const double s = static_cast<double>(ns) * grid.dt;
    return std::exp(cd(0, theta * s)) * a[nt - ns];
  }
};

inline AmplitudeTable build_amplitudes(const PureTrajectory &traj, const NodeParams &p, double delta_omega = 0) {
  const auto ops = build_operators(p, delta_omega);
  AmplitudeTable t;
  t.grid = traj.grid;
  t.theta_v = detail::emission_phase_rate(ops, true);
  t.theta_h = detail::emission_phase_rate(ops, false);
  t.alpha0.reserve(traj.psi.size());
  t.beta0.reserve(traj.psi.size());
  for (std::size_t n = 0; n < traj.psi.size(); ++n) {
    const double tt = traj.grid.t(n) - traj.grid.t_start;
    t.alpha0.push_back(std::exp(cd(0, t.theta_v * tt)) * traj.psi[n](D1));
    t.beta0.push_back(std::exp(cd(0, t.theta_h * tt)) * traj.psi[n](Dp1));
  }
  return t;
}

// Cells of width h tiling [t_start, t_start + n h]; kernels are sampled at cell centres.
struct KernelGrid {
  double t_start = 5.5e-6, h = 0.25e-6;
  std::size_t n = 70;

  double t(std::size_t i) const { return t_start + (static_cast<double>(i) + 0.5) * h; }
  double t_end() const { return t_start + static_cast<double>(n) * h; }
  static KernelGrid span(double a, double b, double h) {
    if (!(b > a) || !(h > 0)) throw domain_error("kernel grid: need b > a and h > 0");
    return KernelGrid{a, h, static_cast<std::size_t>(std::llround((b - a) / h))};
  }
};

struct CoherenceKernel {
  KernelGrid grid;
  Eigen::MatrixXcd G; // G(i, j) = sum_s P~(s) a(t_i|s) conj(a(t_j|s))
};

struct PhotonKernels {
  CoherenceKernel v, h;
};

enum class restart_rule { exact, shifted };

namespace detail {

// Accumulates K += sum_k w_k c_k c_k^dagger for columns supplied in batches.
class KernelAccumulator {
public:
  KernelAccumulator(std::size_t n, std::size_t batch = 256) : k_(Eigen::MatrixXcd::Zero(n, n)), a_(n, batch), w_(batch) {}

  Eigen::MatrixXcd::ColXpr next_column(double weight) {
    if (used_ == static_cast<std::size_t>(a_.cols())) flush();
    w_(used_) = weight;
    return a_.col(used_++);
  }
  const Eigen::MatrixXcd &result() {
    flush();
    return k_;
  }

private:
  void flush() {
    if (used_ == 0) return;
    const auto a = a_.leftCols(used_);
    k_.noalias() += a * w_.head(used_).asDiagonal() * a.adjoint();
    used_ = 0;
  }
  Eigen::MatrixXcd k_, a_;
  Eigen::VectorXd w_;
  std::size_t used_ = 0;
};

inline std::vector<std::size_t> kernel_indices(const TimeGrid &fine, const KernelGrid &kg) {
  std::vector<std::size_t> idx(kg.n);
  for (std::size_t i = 0; i < kg.n; ++i) {
    if (kg.t(i) > fine.t_end + 0.5 * fine.dt) throw domain_error("kernel grid extends beyond the integration grid");
    idx[i] = fine.index_of(kg.t(i));
  }
  return idx;
}

inline void apply_phase(Eigen::MatrixXcd &g, const TimeGrid &fine, const std::vector<std::size_t> &idx, double theta) {
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j)
      g(i, j) *= std::exp(cd(0, theta * (fine.t(idx[i]) - fine.t(idx[j]))));
}

} // namespace detail

// Kernels from the shift rule. P_s is sampled on the table's grid; the no-scattering
// term is added explicitly.
inline PhotonKernels coherence_kernels(const AmplitudeTable &table, const std::vector<double> &P_s,
                                       const KernelGrid &kg, bool include_scattering = true) {
  const auto &fine = table.grid;
  const auto idx = detail::kernel_indices(fine, kg);
  const std::size_t n = kg.n;
  const std::size_t last = idx.empty() ? 0 : *std::max_element(idx.begin(), idx.end());
  detail::KernelAccumulator kv(n), kh(n);
  // Unphased amplitudes <D|Psi_{t-s|0}>, phases restored at the end.
  auto raw = [&](const std::vector<cd> &a, double theta, std::size_t m) {
    return std::exp(cd(0, -theta * static_cast<double>(m) * fine.dt)) * a[m];
  };
  for (std::size_t k = 0; k <= last; ++k) {
    const double w = (k == 0 ? 1.0 : 0.0) + (include_scattering && k < P_s.size() ? P_s[k] * fine.dt : 0.0);
    if (w == 0) continue;
    auto cv = kv.next_column(w);
    auto ch = kh.next_column(w);
    for (std::size_t i = 0; i < n; ++i) {
      if (idx[i] > k || (k == 0 && idx[i] == 0)) {
        cv(i) = raw(table.alpha0, table.theta_v, idx[i] - k);
        ch(i) = raw(table.beta0, table.theta_h, idx[i] - k);
      } else {
        cv(i) = ch(i) = 0;
      }
    }
  }
  PhotonKernels out{{kg, kv.result()}, {kg, kh.result()}};
  detail::apply_phase(out.v.G, fine, idx, table.theta_v);
  detail::apply_phase(out.h.G, fine, idx, table.theta_h);
  return out;
}

// Kernels with exact restarts: after a scattering event at s the branch is
// re-propagated from |S,0> at time s, using backward adjoint sweeps
// <D|U(t_i, s_k)|S> for all k at once.
inline PhotonKernels exact_kernels(const NodeParams &p, const TimeGrid &fine, const std::vector<double> &P_s,
                                   const KernelGrid &kg, double delta_omega = 0, bool include_scattering = true) {
  const auto ops = build_operators(p, delta_omega);
  detail::check_grid_multiple(ops, fine);
  auto steps = detail::no_noise_steps(ops, fine);
  const auto idx = detail::kernel_indices(fine, kg);
  const std::size_t n = kg.n;

  // Rows in order of decreasing fine index so that the active rows form a prefix.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return idx[a] > idx[b]; });

  using RowMat = Eigen::Matrix<cd, Eigen::Dynamic, 4, Eigen::RowMajor>;
  RowMat rv = RowMat::Zero(n, 4), rh = RowMat::Zero(n, 4);
  for (std::size_t r = 0; r < n; ++r) {
    rv(r, D1) = 1;
    rh(r, Dp1) = 1;
  }
  detail::KernelAccumulator kv(n), kh(n);
  const std::size_t top = n ? idx[order[0]] : 0;
  std::size_t active = 0;
  for (std::size_t kk = top + 1; kk-- > 0;) {
    // Rows with idx > kk have been propagated back to t_kk.
    while (active < n && idx[order[active]] > kk) ++active;
    if (kk < top) {
      // Advance the newly active rows and the old ones together.
      const MatrixXcd &step = steps(kk);
      rv.topRows(active) = rv.topRows(active) * step;
      rh.topRows(active) = rh.topRows(active) * step;
    }
    const double w = (kk == 0 ? 1.0 : 0.0) + (include_scattering && kk < P_s.size() ? P_s[kk] * fine.dt : 0.0);
    if (w == 0) continue;
    auto cv = kv.next_column(w);
    auto ch = kh.next_column(w);
    cv.setZero();
    ch.setZero();
    for (std::size_t r = 0; r < active; ++r) {
      cv(order[r]) = rv(r, S0);
      ch(order[r]) = rh(r, S0);
    }
  }
  PhotonKernels out{{kg, kv.result()}, {kg, kh.result()}};
  detail::apply_phase(out.v.G, fine, idx, detail::emission_phase_rate(ops, true));
  detail::apply_phase(out.h.G, fine, idx, detail::emission_phase_rate(ops, false));
  return out;
}

struct EmissionProbabilities {
  double P_V = 0, P_H = 0;
};

inline EmissionProbabilities photon_emission_probabilities(const PhotonKernels &k, const NodeParams &p) {
  EmissionProbabilities e;
  e.P_V = 2 * p.kappa * k.v.G.diagonal().real().sum() * k.v.grid.h;
  e.P_H = 2 * p.kappa * k.h.G.diagonal().real().sum() * k.h.grid.h;
  return e;
}

// Convex combination of per-offset kernels.
inline PhotonKernels average_kernels(const std::vector<PhotonKernels> &ks, const std::vector<double> &w) {
  PhotonKernels out = ks.at(0);
  out.v.G *= w.at(0);
  out.h.G *= w.at(0);
  for (std::size_t k = 1; k < ks.size(); ++k) {
    out.v.G += w[k] * ks[k].v.G;
    out.h.G += w[k] * ks[k].h.G;
  }
  return out;
}

// Per-node photon description: ensemble of kernels (one per jitter offset) plus
// jitter-averaged envelopes on the fine grid.
struct PhotonRecord {
  NodeParams params;
  JitterEnsemble ensemble;
  KernelGrid kgrid;
  std::vector<PhotonKernels> kernels;
  EmissionCurves envelopes;
};

struct RecordOptions {
  double dt = default_dt;
  double t_end = 50e-6;
  KernelGrid kgrid{};
  restart_rule rule = restart_rule::exact;
  bool scattering = true;
};

inline PhotonRecord build_photon_record(const NodeParams &p, const JitterEnsemble &ens, const RecordOptions &opt = {}) {
  PhotonRecord rec;
  rec.params = p;
  rec.ensemble = ens;
  rec.kgrid = opt.kgrid;
  const auto grid = beat_grid(p, std::max(opt.t_end, opt.kgrid.t_end()), opt.dt);
  for (std::size_t k = 0; k < ens.size(); ++k) {
    auto curves = emission_curves(p, grid, ens.offsets[k]);
    if (opt.rule == restart_rule::exact) {
      rec.kernels.push_back(exact_kernels(p, grid, curves.P_s, opt.kgrid, ens.offsets[k], opt.scattering));
    } else {
      const auto amp = build_amplitudes(propagate_no_noise(p, grid, ens.offsets[k]), p, ens.offsets[k]);
      rec.kernels.push_back(coherence_kernels(amp, curves.P_s, opt.kgrid, opt.scattering));
    }
    if (k == 0) {
      rec.envelopes = curves;
      for (auto *v : {&rec.envelopes.p_v, &rec.envelopes.p_h, &rec.envelopes.P_s, &rec.envelopes.trace})
        for (auto &x : *v) x *= ens.weights[0];
    } else {
      for (std::size_t i = 0; i < grid.size(); ++i) {
        rec.envelopes.p_v[i] += ens.weights[k] * curves.p_v[i];
        rec.envelopes.p_h[i] += ens.weights[k] * curves.p_h[i];
        rec.envelopes.P_s[i] += ens.weights[k] * curves.P_s[i];
        rec.envelopes.trace[i] += ens.weights[k] * curves.trace[i];
      }
    }
  }
  return rec;
}

} // namespace ionnet
