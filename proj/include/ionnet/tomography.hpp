#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <gsl/gsl_multimin.h>
#include <nlohmann/json.hpp>

#include "empirical.hpp"

namespace ionnet {

// Qubit encoding: |0> = D', |1> = D, so the two-qubit index is 2 a + b with ion A first.
enum class pauli { X, Y, Z };

inline Eigen::Matrix2cd pauli_projector(pauli b, int outcome) {
  const double s = outcome >= 0 ? 1 : -1;
  Eigen::Vector2cd v;
  switch (b) {
  case pauli::X: v << 1, s; break;
  case pauli::Y: v << 1, cd(0, s); break;
  case pauli::Z:
    v = outcome >= 0 ? Eigen::Vector2cd(1, 0) : Eigen::Vector2cd(0, 1);
    return v * v.adjoint();
  }
  v /= std::sqrt(2.0);
  return v * v.adjoint();
}

inline const std::array<std::string, 9> &setting_names() {
  static const std::array<std::string, 9> n = {"XX", "XY", "XZ", "YX", "YY", "YZ", "ZX", "ZY", "ZZ"};
  return n;
}

inline pauli pauli_from(char c) {
  switch (c) {
  case 'X': return pauli::X;
  case 'Y': return pauli::Y;
  case 'Z': return pauli::Z;
  }
  throw domain_error(std::string("unknown Pauli basis '") + c + "'");
}

// Outcome order (++, +-, -+, --).
inline std::array<Matrix4c, 4> setting_projectors(const std::string &setting) {
  const pauli a = pauli_from(setting.at(0)), b = pauli_from(setting.at(1));
  std::array<Matrix4c, 4> out;
  const int signs[4][2] = {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  for (int k = 0; k < 4; ++k) {
    const Eigen::Matrix2cd pa = pauli_projector(a, signs[k][0]), pb = pauli_projector(b, signs[k][1]);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < 2; ++c) out[k](2 * i + r, 2 * j + c) = pa(i, j) * pb(r, c);
  }
  return out;
}

struct CountsRecord {
  std::map<std::string, std::array<std::int64_t, 4>> counts;

  std::int64_t total(const std::string &s) const {
    const auto &c = counts.at(s);
    return c[0] + c[1] + c[2] + c[3];
  }
  void validate() const {
    for (const auto &name : setting_names()) {
      auto it = counts.find(name);
      if (it == counts.end()) throw domain_error("counts: missing setting " + name);
      for (auto n : it->second)
        if (n < 0) throw domain_error("counts: negative count in setting " + name);
      if (total(name) == 0) throw domain_error("counts: setting " + name + " has no counts");
    }
  }
};

inline CountsRecord counts_from_json(const nlohmann::json &j) {
  CountsRecord c;
  try {
    const auto &s = j.contains("settings") ? j.at("settings") : j;
    for (const auto &name : setting_names()) {
      const auto arr = s.at(name).get<std::vector<std::int64_t>>();
      if (arr.size() != 4) throw config_error("counts: setting " + name + " needs four counts");
      c.counts[name] = {arr[0], arr[1], arr[2], arr[3]};
    }
  } catch (const nlohmann::json::exception &e) {
    throw config_error(std::string("counts file: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json counts_to_json(const CountsRecord &c) {
  nlohmann::json s;
  for (const auto &[k, v] : c.counts) s[k] = std::vector<std::int64_t>(v.begin(), v.end());
  return {{"settings", s}};
}

// Exact Born-rule expectation counts (rounded) for each setting.
inline CountsRecord expected_counts(const Matrix4c &rho, std::int64_t per_setting) {
  CountsRecord c;
  for (const auto &name : setting_names()) {
    const auto proj = setting_projectors(name);
    std::array<std::int64_t, 4> n{};
    for (int k = 0; k < 4; ++k)
      n[k] = std::llround(std::max(0.0, (proj[k] * rho).trace().real()) * double(per_setting));
    c.counts[name] = n;
  }
  return c;
}

inline CountsRecord sample_counts(const Matrix4c &rho, std::int64_t per_setting, std::mt19937_64 &rng);

namespace detail {

inline std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

struct LikelihoodModel {
  std::vector<Matrix4c> proj;
  std::vector<double> freq; // counts / total counts

  explicit LikelihoodModel(const CountsRecord &c) {
    double total = 0;
    for (const auto &name : setting_names()) total += double(c.total(name));
    for (const auto &name : setting_names()) {
      const auto p = setting_projectors(name);
      for (int k = 0; k < 4; ++k) {
        proj.push_back(p[k]);
        freq.push_back(double(c.counts.at(name)[k]) / total);
      }
    }
  }
  double prob(std::size_t i, const Matrix4c &rho) const { return (proj[i] * rho).trace().real(); }
  // Negative mean log-likelihood; +inf if an observed outcome has zero probability.
  double cost(const Matrix4c &rho) const {
    double f = 0;
    for (std::size_t i = 0; i < proj.size(); ++i) {
      if (freq[i] == 0) continue;
      const double p = prob(i, rho);
      if (!(p > 0)) return std::numeric_limits<double>::infinity();
      f -= freq[i] * std::log(p);
    }
    return f;
  }
  Matrix4c gradient(const Matrix4c &rho) const {
    Matrix4c g = Matrix4c::Zero();
    for (std::size_t i = 0; i < proj.size(); ++i)
      if (freq[i] > 0) g -= (freq[i] / std::max(prob(i, rho), 1e-300)) * proj[i];
    return g;
  }
};

inline Eigen::Vector4d project_simplex(const Eigen::Vector4d &x) {
  std::array<double, 4> u = {x(0), x(1), x(2), x(3)};
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0, theta = 0;
  for (int k = 0; k < 4; ++k) {
    cum += u[k];
    const double t = (cum - 1) / (k + 1);
    if (u[k] - t > 0) theta = t;
  }
  return (x.array() - theta).cwiseMax(0.0);
}

inline Matrix4c project_density(const Matrix4c &m) {
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(0.5 * (m + m.adjoint()));
  const Eigen::Vector4d l = project_simplex(es.eigenvalues());
  return es.eigenvectors() * l.cast<cd>().asDiagonal() * es.eigenvectors().adjoint();
}

} // namespace detail

struct MleOptions {
  int max_iterations = 2000;
  double tolerance = 1e-8;
  // Accepted gap once double-precision rounding stops further progress.
  double floor_tolerance = 1e-5;
};

struct MleResult {
  Matrix4c rho;
  int iterations = 0;
  double stationarity = 0;
  double neg_log_likelihood = 0;
};

// Maximum-likelihood estimate by accelerated projected gradient on the set of density
// operators (eigenvalue projection onto the simplex keeps every iterate physical).
inline MleResult mle_reconstruct_detail(const CountsRecord &counts, const MleOptions &opt = {}) {
  counts.validate();
  const detail::LikelihoodModel model(counts);
  Matrix4c rho = Matrix4c::Identity() / 4, sigma = rho;
  double f_rho = model.cost(rho);
  double theta = 1, step = 1;
  MleResult r;
  auto gap = [&](const Matrix4c &x) {
    // Duality gap lambda_max(R) - 1 with R = -grad (tr(R rho) = 1); it bounds the cost suboptimality.
    Eigen::SelfAdjointEigenSolver<Matrix4c> es(-model.gradient(x), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff() - 1;
  };
  auto finish = [&](int it) {
    r.rho = 0.5 * (rho + rho.adjoint());
    r.rho /= r.rho.trace().real();
    r.neg_log_likelihood = f_rho;
    r.iterations = it;
    return r;
  };
  bool restarted = false;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    double f_sigma = model.cost(sigma);
    if (!std::isfinite(f_sigma)) {
      sigma = rho;
      f_sigma = f_rho;
      theta = 1;
    }
    const Matrix4c g = model.gradient(sigma);
    Matrix4c next;
    double f_next;
    for (;;) {
      next = detail::project_density(sigma - step * g);
      f_next = model.cost(next);
      const Matrix4c d = next - sigma;
      const double bound = f_sigma + (g.adjoint() * d).trace().real() + d.squaredNorm() / (2 * step);
      if (std::isfinite(f_next) && f_next <= bound + 1e-15) break;
      step *= 0.5;
      if (step < 1e-20) break;
    }
    if (!(f_next < f_rho)) {
      r.stationarity = gap(rho);
      if (restarted) {
        // A plain gradient step from the current estimate no longer lowers the cost: rounding floor.
        if (r.stationarity < opt.floor_tolerance) return finish(it);
        break;
      }
      sigma = rho;
      theta = 1;
      restarted = true;
      continue;
    }
    restarted = false;
    const double theta_next = 0.5 * (1 + std::sqrt(1 + 4 * theta * theta));
    sigma = next + ((theta - 1) / theta_next) * (next - rho);
    rho = next;
    f_rho = f_next;
    theta = theta_next;
    step *= 1.5;
    r.stationarity = gap(rho);
    if (r.stationarity < opt.tolerance) return finish(it);
  }
  throw estimation_error("maximum-likelihood reconstruction did not converge in " + std::to_string(opt.max_iterations) +
                         " iterations (duality gap " + detail::sci(r.stationarity) + ")");
}

inline Matrix4c mle_reconstruct(const CountsRecord &counts, const MleOptions &opt = {}) {
  return mle_reconstruct_detail(counts, opt).rho;
}

// Fixed-point iteration rho <- R rho R / tr, a slower but independent maximizer.
inline Matrix4c mle_rrr(const CountsRecord &counts, int iterations = 20000) {
  const detail::LikelihoodModel model(counts);
  Matrix4c rho = Matrix4c::Identity() / 4;
  for (int it = 0; it < iterations; ++it) {
    const Matrix4c r = -model.gradient(rho);
    rho = r * rho * r;
    rho = 0.5 * (rho + rho.adjoint());
    rho /= rho.trace().real();
  }
  return rho;
}

inline double negative_log_likelihood(const CountsRecord &counts, const Matrix4c &rho) {
  return detail::LikelihoodModel(counts).cost(rho);
}

inline double bell_fidelity(const Matrix4c &rho, int sign, double phi) { return state_fidelity(rho, sign, phi); }

struct PhaseOptimum {
  double phi = 0, F = 0;
};

// F(phi) = (rho_11 + rho_22) / 2 + s Re(e^{i phi} rho_21), maximized in closed form.
inline PhaseOptimum optimize_phase(const Matrix4c &rho, int sign) {
  const cd c = double(sign >= 0 ? 1 : -1) * rho(DDp, DpD);
  double phi = 0;
  if (std::abs(c) > 1e-14) phi = std::fmod(-std::arg(c) + two_pi, two_pi);
  return {phi, bell_fidelity(rho, sign, phi)};
}

struct FidelityTarget {
  int sign = +1;
  bool optimize = true;
  double phi = 0;
};

struct FidelityEstimate {
  double value = 0, upper = 0, lower = 0;
  double mean = 0, std = 0;
  double phi = 0;
  bool negative_width = false;
  std::vector<double> samples;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t trial_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

// Multinomial draw by successive binomials.
inline std::array<std::int64_t, 4> multinomial(std::int64_t n, const std::array<double, 4> &p, std::mt19937_64 &rng) {
  std::array<std::int64_t, 4> out{};
  double rest = 1;
  for (int k = 0; k < 3; ++k) {
    if (n <= 0 || rest <= 0) break;
    const double q = std::clamp(p[k] / rest, 0.0, 1.0);
    out[k] = std::binomial_distribution<std::int64_t>(n, q)(rng);
    n -= out[k];
    rest -= p[k];
  }
  out[3] = std::max<std::int64_t>(n, 0);
  return out;
}

inline CountsRecord sample_counts(const Matrix4c &rho, std::int64_t per_setting, std::mt19937_64 &rng) {
  CountsRecord c;
  for (const auto &name : setting_names()) {
    const auto proj = setting_projectors(name);
    std::array<double, 4> p{};
    double s = 0;
    for (int k = 0; k < 4; ++k) s += (p[k] = std::max(0.0, (proj[k] * rho).trace().real()));
    for (auto &x : p) x /= s;
    c.counts[name] = multinomial(per_setting, p, rng);
  }
  return c;
}

inline CountsRecord resample(const CountsRecord &c, std::mt19937_64 &rng) {
  CountsRecord out;
  for (const auto &name : setting_names()) {
    const auto &n = c.counts.at(name);
    const double tot = double(c.total(name));
    out.counts[name] = multinomial(c.total(name), {n[0] / tot, n[1] / tot, n[2] / tot, n[3] / tot}, rng);
  }
  return out;
}

inline FidelityEstimate resample_uncertainty(const CountsRecord &counts, const FidelityTarget &target, int M,
                                             std::uint64_t seed, unsigned threads = 0, const MleOptions &opt = {}) {
  if (M < 2) throw domain_error("resample_uncertainty: need M >= 2");
  FidelityEstimate e;
  const Matrix4c rho = mle_reconstruct(counts, opt);
  e.phi = target.optimize ? optimize_phase(rho, target.sign).phi : target.phi;
  e.value = bell_fidelity(rho, target.sign, e.phi);
  e.samples.assign(static_cast<std::size_t>(M), 0.0);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(M));
  auto work = [&](unsigned w) {
    for (int m = static_cast<int>(w); m < M; m += static_cast<int>(threads)) {
      std::mt19937_64 rng(trial_seed(seed, static_cast<std::uint64_t>(m)));
      const CountsRecord rc = resample(counts, rng);
      e.samples[static_cast<std::size_t>(m)] = bell_fidelity(mle_reconstruct(rc, opt), target.sign, e.phi);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < threads; ++w) pool.emplace_back(work, w);
  work(0);
  for (auto &t : pool) t.join();
  double s = 0;
  for (double x : e.samples) s += x;
  e.mean = s / M;
  double v = 0;
  for (double x : e.samples) v += (x - e.mean) * (x - e.mean);
  e.std = std::sqrt(v / (M - 1));
  e.upper = e.mean + e.std - e.value;
  e.lower = e.value - e.mean + e.std;
  e.negative_width = e.upper < 0 || e.lower < 0;
  return e;
}

// Polarization inputs H, V, D, A, R, L with H = |0>, V = |1>, R = (H + iV)/sqrt 2.
inline std::array<Eigen::Vector2cd, 6> polarization_inputs() {
  const double s = 1 / std::sqrt(2.0);
  return {Eigen::Vector2cd(1, 0), Eigen::Vector2cd(0, 1), Eigen::Vector2cd(s, s),
          Eigen::Vector2cd(s, -s), Eigen::Vector2cd(s, cd(0, s)), Eigen::Vector2cd(s, cd(0, -s))};
}

// U = Rz(a) Ry(b) Rz(c)
inline Eigen::Matrix2cd euler_unitary(double a, double b, double c) {
  auto rz = [](double x) {
    Eigen::Matrix2cd m = Eigen::Matrix2cd::Zero();
    m(0, 0) = std::exp(cd(0, -x / 2));
    m(1, 1) = std::exp(cd(0, x / 2));
    return m;
  };
  Eigen::Matrix2cd ry;
  ry << std::cos(b / 2), -std::sin(b / 2), std::sin(b / 2), std::cos(b / 2);
  return rz(a) * ry * rz(c);
}

struct UnitaryFit {
  Eigen::Matrix2cd U;
  double mean_fidelity = 0;
  bool ill_conditioned = false;
};

inline double channel_mean_fidelity(const Eigen::Matrix2cd &u, const std::array<Eigen::Matrix2cd, 6> &outputs) {
  const auto in = polarization_inputs();
  double f = 0;
  for (int k = 0; k < 6; ++k) {
    const Eigen::Vector2cd v = u * in[k];
    f += (v.adjoint() * outputs[k] * v)(0).real();
  }
  return f / 6;
}

inline UnitaryFit nearest_unitary_fit(const std::array<Eigen::Matrix2cd, 6> &outputs) {
  UnitaryFit best;
  best.mean_fidelity = -1;
  double spread = 0;
  for (int k = 1; k < 6; ++k) spread = std::max(spread, (outputs[k] - outputs[0]).norm());
  best.ill_conditioned = spread < 1e-9;

  struct ctx_t {
    const std::array<Eigen::Matrix2cd, 6> *out;
  } ctx{&outputs};
  gsl_multimin_function fn;
  fn.n = 3;
  fn.params = &ctx;
  fn.f = [](const gsl_vector *x, void *p) {
    const auto *c = static_cast<ctx_t *>(p);
    return -channel_mean_fidelity(euler_unitary(gsl_vector_get(x, 0), gsl_vector_get(x, 1), gsl_vector_get(x, 2)), *c->out);
  };
  const double starts[8][3] = {{0, 0, 0},           {1.0, 1.0, 1.0},   {-1.0, 2.0, 0.5}, {2.5, 0.5, -2.0},
                               {0.5, 2.8, 2.5},     {-2.5, 1.5, -1.0}, {3.0, 2.2, 1.5}, {-0.7, 0.3, -2.7}};
  gsl_vector *x = gsl_vector_alloc(3), *ss = gsl_vector_alloc(3);
  gsl_multimin_fminimizer *s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 3);
  for (const auto &st : starts) {
    for (int k = 0; k < 3; ++k) {
      gsl_vector_set(x, k, st[k]);
      gsl_vector_set(ss, k, 0.5);
    }
    gsl_multimin_fminimizer_set(s, &fn, x, ss);
    for (int it = 0; it < 5000; ++it) {
      if (gsl_multimin_fminimizer_iterate(s)) break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-11) == GSL_SUCCESS) break;
    }
    const double f = -s->fval;
    if (f > best.mean_fidelity + 1e-13) {
      best.mean_fidelity = f;
      best.U = euler_unitary(gsl_vector_get(s->x, 0), gsl_vector_get(s->x, 1), gsl_vector_get(s->x, 2));
    }
  }
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(x);
  gsl_vector_free(ss);
  return best;
}

inline nlohmann::json matrix_json(const Matrix4c &m) {
  nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) {
    nlohmann::json a = nlohmann::json::array(), b = nlohmann::json::array();
    for (int c = 0; c < 4; ++c) {
      a.push_back(m(r, c).real());
      b.push_back(m(r, c).imag());
    }
    re.push_back(a);
    im.push_back(b);
  }
  return {{"real", re}, {"imag", im}};
}

} // namespace ionnet
