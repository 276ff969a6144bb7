#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "pbsm.hpp"

namespace ionnet {

using Matrix4c = Eigen::Matrix4cd;
using Vector4c = Eigen::Vector4cd;

// Two-qubit basis order (D'D', D'D, DD', DD), ion A first.
enum two_qubit_index : int { DpDp = 0, DpD = 1, DDp = 2, DD = 3 };

// |Psi(+-)> = (|D_A D'_B> +- e^{i phi} |D'_A D_B>) / sqrt 2
inline Vector4c bell_state(int sign, double phi) {
  Vector4c v = Vector4c::Zero();
  v(DDp) = 1 / std::sqrt(2.0);
  v(DpD) = double(sign >= 0 ? 1 : -1) * std::exp(cd(0, phi)) / std::sqrt(2.0);
  return v;
}

inline Matrix4c bell_projector(int sign, double phi) {
  const Vector4c v = bell_state(sign, phi);
  return v * v.adjoint();
}

inline void check_state(const Matrix4c &rho, double tol = 1e-10) {
  if ((rho - rho.adjoint()).norm() > tol) throw numerical_error("two-qubit state is not Hermitian");
  if (std::abs(rho.trace().real() - 1) > 1e-12 * 100) throw numerical_error("two-qubit state does not have unit trace");
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(0.5 * (rho + rho.adjoint()));
  if (es.eigenvalues().minCoeff() < -tol) throw numerical_error("two-qubit state is not positive semidefinite");
}

struct BackgroundBudget {
  double p_ph_ph = 0, p_ph_bg = 0, p_bg_bg = 0;
  double p_tot_bg() const { return p_ph_bg + p_bg_bg; }
  double total() const { return p_ph_ph + p_tot_bg(); }
};

inline BackgroundBudget coincidence_probs(const DetectorTable &t, std::size_t d1, std::size_t d2) {
  if (d1 == d2) throw domain_error("coincidence_probs: detectors must differ");
  const auto &a = t.det.at(d1), &b = t.det.at(d2);
  return {a.p_A * b.p_B + a.p_B * b.p_A, (a.p_A + a.p_B) * b.p_bg + (b.p_A + b.p_B) * a.p_bg, a.p_bg * b.p_bg};
}

// Budget for coincidence window T: background probabilities scale linearly with the
// window 2T (capped at the detection window), photon pairs by `photon_pair_fraction`.
inline BackgroundBudget coincidence_probs(const DetectorTable &t, std::size_t d1, std::size_t d2, double T,
                                          double photon_pair_fraction = 1.0) {
  const double f = std::clamp(2 * T / t.window, 0.0, 1.0);
  BackgroundBudget b = coincidence_probs(t, d1, d2);
  b.p_ph_ph *= photon_pair_fraction;
  b.p_ph_bg *= f;
  b.p_bg_bg *= f;
  return b;
}

// Entry-wise construction from the outcome probabilities p_mn.
inline Matrix4c rho_block_matrix(const BackgroundBudget &b, int sign, double phi) {
  const double p_dd = b.p_tot_bg() / 4;
  const double p_ddp = b.p_ph_ph / 2 + b.p_tot_bg() / 4;
  const double sum = 2 * p_dd + 2 * p_ddp;
  if (!(sum > 0)) throw degenerate_input_error("background model: all coincidence probabilities vanish");
  Matrix4c m = Matrix4c::Zero();
  m(DpDp, DpDp) = p_dd;
  m(DD, DD) = p_dd;
  m(DpD, DpD) = p_ddp;
  m(DDp, DDp) = p_ddp;
  const cd c = double(sign >= 0 ? 1 : -1) * std::exp(cd(0, phi)) * (b.p_ph_ph / 2);
  m(DpD, DDp) = c;
  m(DDp, DpD) = std::conj(c);
  return m / sum;
}

// White-noise form: (p_ph_ph rho(+-) + p_tot_bg I / 4) / sum p_mn.
inline Matrix4c rho_with_background(const BackgroundBudget &b, int sign, double phi) {
  const double sum = b.total();
  if (!(sum > 0)) throw degenerate_input_error("background model: all coincidence probabilities vanish");
  return (b.p_ph_ph * bell_projector(sign, phi) + (b.p_tot_bg() / 4) * Matrix4c::Identity()) / sum;
}

inline Matrix4c apply_dephasing(const Matrix4c &rho, double V) {
  V = std::clamp(V, 0.0, 1.0);
  Matrix4c d = Matrix4c::Zero();
  d.diagonal() = rho.diagonal();
  return V * rho + (1 - V) * d;
}

inline double ion_ion_fidelity(double f_a, double f_b) {
  for (double f : {f_a, f_b})
    if (!(f >= 0.25 && f <= 1)) throw domain_error("ion-photon fidelity must lie in [0.25, 1]");
  return 0.25 * (1 + 3 * ((4 * f_a - 1) / 3) * ((4 * f_b - 1) / 3));
}

inline double depolarizing_parameter(double f_ii) { return (4 * f_ii - 1) / 3; }

inline Matrix4c depolarizing_correction(const Matrix4c &rho, double f_a, double f_b) {
  const double lambda = depolarizing_parameter(ion_ion_fidelity(f_a, f_b));
  return lambda * rho + (1 - lambda) * Matrix4c::Identity() / 4;
}

inline double state_fidelity(const Matrix4c &rho, int sign, double phi) {
  const Vector4c v = bell_state(sign, phi);
  return std::clamp((v.adjoint() * rho * v)(0).real(), 0.0, 1.0);
}

struct FidelityInputs {
  double f_ip_a = 0.938, f_ip_b = 0.956;
  double phi = 0;
  std::size_t plus_pair[2] = {2, 3};                 // SNSPD1, SNSPD2
  std::vector<std::pair<std::size_t, std::size_t>> minus_pairs; // empty: orthogonal opposite-output pairs
};

struct FidelityCurve {
  std::vector<double> T, F_plus_full, F_minus_full, F_plus_nodephase, F_minus_nodephase;
};

inline std::vector<std::pair<std::size_t, std::size_t>> orthogonal_opposite_pairs(const DetectorTable &t) {
  using P = polarization;
  using O = output;
  return {{t.index(P::h, O::r), t.index(P::v, O::u)}, {t.index(P::v, O::r), t.index(P::h, O::u)}};
}

inline double model_fidelity(const BackgroundBudget &b, double V, int sign, const FidelityInputs &in, bool dephase) {
  Matrix4c rho = rho_with_background(b, sign, in.phi);
  if (dephase) rho = apply_dephasing(rho, V);
  rho = depolarizing_correction(rho, in.f_ip_a, in.f_ip_b);
  return state_fidelity(rho, sign, in.phi);
}

// V and the optional photon-pair fractions are sampled at the points of T_list.
inline FidelityCurve model_fidelity_curve(const std::vector<double> &V, const DetectorTable &table,
                                          const FidelityInputs &in, const std::vector<double> &T_list,
                                          const std::vector<double> &photon_pair_fraction = {}) {
  if (V.size() != T_list.size()) throw domain_error("model_fidelity_curve: V and T lists differ in length");
  const auto minus = in.minus_pairs.empty() ? orthogonal_opposite_pairs(table) : in.minus_pairs;
  FidelityCurve c;
  c.T = T_list;
  for (std::size_t k = 0; k < T_list.size(); ++k) {
    const double f = photon_pair_fraction.empty() ? 1.0 : photon_pair_fraction.at(k);
    const auto bp = coincidence_probs(table, in.plus_pair[0], in.plus_pair[1], T_list[k], f);
    BackgroundBudget bm{};
    for (const auto &pr : minus) {
      const auto b = coincidence_probs(table, pr.first, pr.second, T_list[k], f);
      bm.p_ph_ph += b.p_ph_ph / double(minus.size());
      bm.p_ph_bg += b.p_ph_bg / double(minus.size());
      bm.p_bg_bg += b.p_bg_bg / double(minus.size());
    }
    c.F_plus_full.push_back(model_fidelity(bp, V[k], +1, in, true));
    c.F_minus_full.push_back(model_fidelity(bm, V[k], -1, in, true));
    c.F_plus_nodephase.push_back(model_fidelity(bp, V[k], +1, in, false));
    c.F_minus_nodephase.push_back(model_fidelity(bm, V[k], -1, in, false));
  }
  return c;
}

} // namespace ionnet
