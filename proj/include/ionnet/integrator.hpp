#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "errors.hpp"

namespace ionnet {

using MatrixXcd = Eigen::MatrixXcd;

// Fourth-order Magnus step for x' = A(t) x over [t0, t0 + h].
inline MatrixXcd magnus4_step(const std::function<MatrixXcd(double)> &gen, double t0, double h) {
  static const double c = 0.5 - std::sqrt(3.0) / 6.0;
  const MatrixXcd a1 = gen(t0 + c * h);
  const MatrixXcd a2 = gen(t0 + (1 - c) * h);
  MatrixXcd omega = 0.5 * h * (a1 + a2);
  omega.noalias() += (std::sqrt(3.0) * h * h / 12.0) * (a2 * a1 - a1 * a2);
  return omega.exp();
}

// Step propagators on a uniform grid t_n = t_start + n dt for a generator that is
// periodic with period m dt for t < t_switch and constant afterwards.
// Propagators inside the periodic part are cached per phase.
class StepPropagators {
public:
  using generator = std::function<MatrixXcd(double, bool)>; // (t, drive_on)

  StepPropagators(generator gen, double t_start, double dt, std::size_t period_steps, double t_switch)
      : gen_(std::move(gen)), t0_(t_start), dt_(dt), m_(period_steps ? period_steps : 1), t_switch_(t_switch) {
    if (!(dt > 0)) throw integrator_error("step size must be positive");
  }

  double dt() const { return dt_; }
  double time(std::size_t n) const { return t0_ + static_cast<double>(n) * dt_; }

  const MatrixXcd &operator()(std::size_t n) {
    const double a = time(n), b = time(n + 1);
    if (b <= t_switch_ + 1e-9 * dt_) {
      if (cache_.empty()) fill_cache();
      return cache_[n % m_];
    }
    if (a >= t_switch_ - 1e-9 * dt_) {
      if (after_.size() == 0) after_ = step(a, dt_, false);
      return after_;
    }
    // Step straddles the switch: split it at the switch time.
    straddle_ = step(t_switch_, b - t_switch_, false) * step(a, t_switch_ - a, true);
    return straddle_;
  }

private:
  MatrixXcd step(double t, double h, bool on) const {
    return magnus4_step([&](double s) { return gen_(s, on); }, t, h);
  }
  void fill_cache() {
    cache_.reserve(m_);
    for (std::size_t k = 0; k < m_; ++k) cache_.push_back(step(time(k), dt_, true));
  }

  generator gen_;
  double t0_, dt_;
  std::size_t m_;
  double t_switch_;
  std::vector<MatrixXcd> cache_;
  MatrixXcd after_, straddle_;
};

} // namespace ionnet
