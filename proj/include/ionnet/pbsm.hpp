#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "purebranch.hpp"

namespace ionnet {

enum class output { u, r };
enum class polarization { h, v };

struct Detector {
  std::string name;
  double bg_rate = 0;  // counts per second
  double p_bg = 0;     // background probability per detection window
  double p_A = 0, p_B = 0; // background-subtracted detection probabilities per attempt
  double efficiency = 1;   // relative, largest is 1
  output out = output::u;
  polarization pol = polarization::h;
};

struct DetectorTable {
  std::array<Detector, 4> det;
  double window = 17.5e-6; // length of the detection window the probabilities refer to
  // Probability that a photon emitted by node A (B) reaches the beamsplitter, per polarization.
  std::array<double, 2> path_A{1, 1}, path_B{1, 1};

  std::size_t index(polarization p, output o) const {
    for (std::size_t k = 0; k < det.size(); ++k)
      if (det[k].pol == p && det[k].out == o) return k;
    throw domain_error("detector table: no detector for the requested polarization and output");
  }
  std::size_t index(const std::string &name) const {
    for (std::size_t k = 0; k < det.size(); ++k)
      if (det[k].name == name) return k;
    throw domain_error("detector table: unknown detector '" + name + "'");
  }
  double eta(polarization p, output o) const { return det[index(p, o)].efficiency; }

  void validate() const {
    for (const auto &d : det) {
      for (double x : {d.p_bg, d.p_A, d.p_B, d.efficiency})
        if (!(x >= 0 && x <= 1)) throw domain_error("detector table: probabilities must lie in [0, 1]");
      if (!(d.bg_rate >= 0)) throw domain_error("detector table: negative background rate");
    }
    for (polarization p : {polarization::h, polarization::v})
      for (output o : {output::u, output::r}) (void)index(p, o);
  }
};

// Measured detector table. SNSPDs sit on output u, SPCMs on output r; detectors with
// equal index share a polarization unless `index_matched` is false.
inline DetectorTable measured_detectors(bool index_matched = true) {
  DetectorTable t;
  const auto H = polarization::h, V = polarization::v;
  t.det[0] = {"SPCM1", 9.69, 0.017e-2, 0.08e-2, 1.30e-2, 1, output::r, H};
  t.det[1] = {"SPCM2", 9.37, 0.016e-2, 0.12e-2, 1.96e-2, 1, output::r, V};
  t.det[2] = {"SNSPD1", 0.25, 0.0004e-2, 0.19e-2, 2.82e-2, 1, output::u, index_matched ? H : V};
  t.det[3] = {"SNSPD2", 2.00, 0.0035e-2, 0.24e-2, 3.62e-2, 1, output::u, index_matched ? V : H};
  return t;
}

// Fits log p^k_r = log Q_k + log e_r + log(P^k_pol(r) / 2) in the least-squares sense,
// where P^k_pol is the in-window emission probability of node k. Sets relative
// efficiencies (max 1) and per-node path probabilities.
inline DetectorTable calibrate_efficiencies(DetectorTable t, const EmissionProbabilities &win_A,
                                            const EmissionProbabilities &win_B) {
  Eigen::Matrix<double, 8, 6> m = Eigen::Matrix<double, 8, 6>::Zero();
  Eigen::Matrix<double, 8, 1> y;
  auto emitted = [](const EmissionProbabilities &e, polarization p) { return p == polarization::v ? e.P_V : e.P_H; };
  for (int node = 0; node < 2; ++node)
    for (int r = 0; r < 4; ++r) {
      const auto &d = t.det[r];
      const double prob = node == 0 ? d.p_A : d.p_B;
      const double em = 0.5 * emitted(node == 0 ? win_A : win_B, d.pol);
      if (!(prob > 0) || !(em > 0)) throw domain_error("calibrate_efficiencies: probabilities must be positive");
      const int row = node * 4 + r;
      m(row, node) = 1;
      m(row, 2 + r) = 1;
      y(row) = std::log(prob / em);
    }
  // Gauge: the largest efficiency is fixed afterwards; pin e_0 here to make the system regular.
  Eigen::Matrix<double, 9, 6> ma;
  Eigen::Matrix<double, 9, 1> ya;
  ma << m, Eigen::Matrix<double, 1, 6>::Zero();
  ma(8, 2) = 1;
  ya << y, 0;
  const Eigen::Matrix<double, 6, 1> x = ma.colPivHouseholderQr().solve(ya);
  double top = x(2);
  for (int r = 1; r < 4; ++r) top = std::max(top, x(2 + r));
  for (int r = 0; r < 4; ++r) t.det[r].efficiency = std::exp(x(2 + r) - top);
  const double qa = std::exp(x(0) + top), qb = std::exp(x(1) + top);
  t.path_A = {qa, qa};
  t.path_B = {qb, qb};
  return t;
}

// Balanced beamsplitter (u, r) = M (a, b).
inline Eigen::Matrix2cd beamsplitter() {
  Eigen::Matrix2cd m;
  const double s = 1 / std::sqrt(2.0);
  m << s, cd(0, s), cd(0, s), s;
  return m;
}

inline Eigen::Matrix2cd beamsplitter_inverse() { return beamsplitter().adjoint(); }

// Two-time rates on the kernel grid; first index t1 at output u, second t2 at output r.
struct CoincidenceRates {
  KernelGrid grid;
  Eigen::MatrixXd det_vh, det_hv, det_hh, det_vv;
};

struct EffPair {
  double vh = 1, hv = 1, hh = 1, vv = 1; // eta_u * eta_r for each class (first letter: output u)
  static EffPair from(const DetectorTable &t) {
    using P = polarization;
    using O = output;
    return {t.eta(P::v, O::u) * t.eta(P::h, O::r), t.eta(P::h, O::u) * t.eta(P::v, O::r),
            t.eta(P::h, O::u) * t.eta(P::h, O::r), t.eta(P::v, O::u) * t.eta(P::v, O::r)};
  }
};

inline Eigen::VectorXd envelope_on(const CoherenceKernel &k, double kappa) {
  return 2 * kappa * k.G.diagonal().real();
}

inline void orthogonal_coincidence(const PhotonKernels &a, double kappa_a, const PhotonKernels &b, double kappa_b,
                                   const EffPair &eta, CoincidenceRates &out) {
  const Eigen::VectorXd av = envelope_on(a.v, kappa_a), ah = envelope_on(a.h, kappa_a);
  const Eigen::VectorXd bv = envelope_on(b.v, kappa_b), bh = envelope_on(b.h, kappa_b);
  // det_vh(t1, t2) = eta/4 (p_h^A(t2) p_v^B(t1) + p_v^A(t1) p_h^B(t2))
  out.det_vh = eta.vh / 4 * (bv * ah.transpose() + av * bh.transpose());
  out.det_hv = eta.hv / 4 * (bh * av.transpose() + ah * bv.transpose());
}

// Same-polarization rate from the factorized kernel identity.
inline Eigen::MatrixXd same_polarization_rate(const CoherenceKernel &a, double kappa_a, const CoherenceKernel &b,
                                              double kappa_b, double eta) {
  const auto n = a.G.rows();
  const Eigen::VectorXd da = a.G.diagonal().real(), db = b.G.diagonal().real();
  Eigen::MatrixXd out(n, n);
  double scale = 1e-300; // size of the uncancelled product terms
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      const double cross = (a.G(i, j) * b.G(j, i)).real();
      const double direct = da(i) * db(j) + da(j) * db(i);
      out(i, j) = direct - 2 * cross;
      scale = std::max(scale, direct);
    }
  if (out.minCoeff() < -1e-9 * scale) throw numerical_error("same-polarization coincidence rate is negative");
  out *= eta / 4 * (2 * kappa_a) * (2 * kappa_b);
  return out.cwiseMax(0.0);
}

inline void parallel_coincidence(const PhotonKernels &a, double kappa_a, const PhotonKernels &b, double kappa_b,
                                 const EffPair &eta, CoincidenceRates &out) {
  out.det_hh = same_polarization_rate(a.h, kappa_a, b.h, kappa_b, eta.hh);
  out.det_vv = same_polarization_rate(a.v, kappa_a, b.v, kappa_b, eta.vv);
}

inline CoincidenceRates coincidence_rates(const PhotonKernels &a, double kappa_a, const PhotonKernels &b,
                                          double kappa_b, const EffPair &eta = {}) {
  CoincidenceRates r;
  r.grid = a.v.grid;
  orthogonal_coincidence(a, kappa_a, b, kappa_b, eta, r);
  parallel_coincidence(a, kappa_a, b, kappa_b, eta, r);
  return r;
}

// Fraction of the cell pair (i, j) with |t1 - t2| <= T, for cells offset by d = (j - i) h.
inline double band_fraction(double d, double h, double T) {
  auto cdf = [h](double x) {
    if (x <= -h) return 0.0;
    if (x <= 0) return (x + h) * (x + h) / (2 * h * h);
    if (x < h) return 1 - (h - x) * (h - x) / (2 * h * h);
    return 1.0;
  };
  if (T <= 0) return 0;
  return std::max(0.0, cdf(T - d) - cdf(-T - d));
}

inline double integrated_coincidence(const Eigen::MatrixXd &rate, const KernelGrid &g, double T) {
  if (T < 0) throw domain_error("integrated_coincidence: T must be nonnegative");
  const auto n = rate.rows();
  std::vector<double> w(static_cast<std::size_t>(2 * n - 1));
  for (Eigen::Index k = -(n - 1); k <= n - 1; ++k) w[static_cast<std::size_t>(k + n - 1)] = band_fraction(k * g.h, g.h, T);
  double s = 0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) s += rate(i, j) * w[static_cast<std::size_t>(j - i + n - 1)];
  return s * g.h * g.h;
}

struct DetValues {
  double vh = 0, hv = 0, hh = 0, vv = 0;
  double visibility() const {
    const double den = vh + hv;
    if (!(den > 0)) throw undefined_visibility_error("visibility undefined: no orthogonal coincidences");
    return 1 - (hh + vv) / den;
  }
};

inline DetValues integrated(const CoincidenceRates &r, double T) {
  return {integrated_coincidence(r.det_vh, r.grid, T), integrated_coincidence(r.det_hv, r.grid, T),
          integrated_coincidence(r.det_hh, r.grid, T), integrated_coincidence(r.det_vv, r.grid, T)};
}

enum class visibility_mode { full, no_technical, pure };

inline const char *mode_name(visibility_mode m) {
  switch (m) {
  case visibility_mode::full: return "full";
  case visibility_mode::no_technical: return "no_technical";
  case visibility_mode::pure: return "pure";
  }
  return "?";
}

struct VisibilityOptions {
  RecordOptions record{};
  int k_max = 6;
  double span_factor = 3.0;
  EffPair eta{};
};

// Node parameters and ensemble for a given mode. Technical noise is laser
// dephasing and cavity jitter; the pure mode further drops scattering.
inline NodeParams mode_params(NodeParams p, visibility_mode m) {
  if (m != visibility_mode::full) {
    p.gamma_ss = 0;
    p.gamma_clj = 0;
  }
  return p;
}

inline PhotonRecord mode_record(const NodeParams &p, visibility_mode m, const VisibilityOptions &opt) {
  const NodeParams q = mode_params(p, m);
  RecordOptions ro = opt.record;
  ro.scattering = m != visibility_mode::pure;
  return build_photon_record(q, jitter_ensemble(q.gamma_clj, opt.k_max, opt.span_factor), ro);
}

// Det quantities averaged over both nodes' jitter ensembles.
inline std::vector<DetValues> det_curve(const PhotonRecord &a, const PhotonRecord &b, const std::vector<double> &T_list,
                                        const EffPair &eta) {
  std::vector<DetValues> out(T_list.size());
  for (std::size_t ka = 0; ka < a.kernels.size(); ++ka)
    for (std::size_t kb = 0; kb < b.kernels.size(); ++kb) {
      const double w = a.ensemble.weights[ka] * b.ensemble.weights[kb];
      const auto rates = coincidence_rates(a.kernels[ka], a.params.kappa, b.kernels[kb], b.params.kappa, eta);
      for (std::size_t t = 0; t < T_list.size(); ++t) {
        const auto d = integrated(rates, T_list[t]);
        out[t].vh += w * d.vh;
        out[t].hv += w * d.hv;
        out[t].hh += w * d.hh;
        out[t].vv += w * d.vv;
      }
    }
  return out;
}

inline std::vector<double> visibility_curve(const PhotonRecord &a, const PhotonRecord &b,
                                            const std::vector<double> &T_list, const EffPair &eta = {}) {
  std::vector<double> v;
  for (const auto &d : det_curve(a, b, T_list, eta)) v.push_back(d.visibility());
  return v;
}

inline std::vector<double> model_visibility(const NodeParams &a, const NodeParams &b, const std::vector<double> &T_list,
                                            visibility_mode m, const VisibilityOptions &opt = {}) {
  return visibility_curve(mode_record(a, m, opt), mode_record(b, m, opt), T_list, opt.eta);
}

inline std::vector<double> default_T_sweep() {
  std::vector<double> t;
  for (double x = 0.25; x <= 17.5 + 1e-9; x += 0.25) t.push_back(x * 1e-6);
  return t;
}

} // namespace ionnet
