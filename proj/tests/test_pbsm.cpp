#include <gtest/gtest.h>

#include <random>

#include <ionnet/pbsm.hpp>

#include "oracles.hpp"

using namespace ionnet;

TEST(Beamsplitter, IsUnitaryAndBalanced) {
  const Eigen::Matrix2cd m = beamsplitter();
  EXPECT_LT((m * m.adjoint() - Eigen::Matrix2cd::Identity()).norm(), 1e-15);
  EXPECT_LT((beamsplitter_inverse() * m - Eigen::Matrix2cd::Identity()).norm(), 1e-15);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(std::norm(m(r, c)), 0.5, 1e-15);
}

TEST(SamePolarization, FactorizedRateEqualsLiteralDoubleSum) {
  // Amplitudes from the no-noise branch at a coarse set of restart times, so the
  // literal quadruple sum stays cheap.
  const KernelGrid kg{5.5e-6, 0.875e-6, 20};
  auto amplitudes = [&](const NodeParams &p, Eigen::MatrixXcd &a, std::vector<double> &w) {
    const auto grid = beat_grid(p, 25e-6, 1e-9);
    const auto table = build_amplitudes(propagate_no_noise(p, grid), p);
    const auto c = emission_curves(p, grid);
    const std::size_t stride = grid.size() / 40;
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s < grid.size(); s += stride) starts.push_back(s);
    a.resize(kg.n, starts.size());
    w.clear();
    for (std::size_t k = 0; k < starts.size(); ++k) {
      w.push_back(k == 0 ? 1.0 : c.P_s[starts[k]] * stride * grid.dt);
      for (std::size_t i = 0; i < kg.n; ++i) a(i, k) = table.alpha(grid.index_of(kg.t(i)), starts[k]);
    }
  };
  const NodeParams pa = preset("nodeA"), pb = preset("nodeB");
  Eigen::MatrixXcd a, b;
  std::vector<double> wa, wb;
  amplitudes(pa, a, wa);
  amplitudes(pb, b, wb);
  auto kernel = [&](const Eigen::MatrixXcd &x, const std::vector<double> &w) {
    CoherenceKernel k{kg, Eigen::MatrixXcd::Zero(kg.n, kg.n)};
    for (Eigen::Index s = 0; s < x.cols(); ++s) k.G += w[static_cast<std::size_t>(s)] * x.col(s) * x.col(s).adjoint();
    return k;
  };
  const auto fact = same_polarization_rate(kernel(a, wa), pa.kappa, kernel(b, wb), pb.kappa, 1.0);
  const Eigen::MatrixXd literal = oracle::literal_double_sum(a, wa, b, wb) * (2 * pa.kappa) * (2 * pb.kappa) / 4;
  EXPECT_LT((fact - literal).cwiseAbs().maxCoeff(), 1e-10 * literal.cwiseAbs().maxCoeff());
  EXPECT_GT(literal.cwiseAbs().maxCoeff(), 0);
}

TEST(SamePolarization, IdenticalIdealNodesFullyBunch) {
  VisibilityOptions opt;
  opt.record.dt = 1e-9;
  const NodeParams p = preset("nodeB");
  const auto rec = mode_record(p, visibility_mode::pure, opt);
  const auto T = default_T_sweep();
  for (const auto &d : det_curve(rec, rec, T, EffPair{})) {
    EXPECT_LT(d.hh, 1e-10);
    EXPECT_LT(d.vv, 1e-10);
    EXPECT_GT(d.vh, 0);
    EXPECT_NEAR(d.visibility(), 1.0, 1e-10);
  }
}

TEST(BandFraction, MatchesDirectQuadrature) {
  const double h = 1.0;
  const int n = 1000;
  for (double d : {-2.0, -1.0, -0.5, 0.0, 0.3, 1.0}) {
    for (double T : {0.0, 0.2, 0.7, 1.0, 1.6, 3.5}) {
      int in = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double t1 = (i + 0.5) * h / n, t2 = d + (j + 0.5) * h / n;
          if (std::abs(t1 - t2) <= T) ++in;
        }
      EXPECT_NEAR(band_fraction(d, h, T), double(in) / (double(n) * n), 3e-3) << "d=" << d << " T=" << T;
    }
  }
}

TEST(IntegratedCoincidence, ConstantRateCoversTheBand) {
  const KernelGrid g{0, 0.5, 8};
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(8, 8);
  EXPECT_NEAR(integrated_coincidence(one, g, 100), 16.0, 1e-12);
  EXPECT_EQ(integrated_coincidence(one, g, 0), 0.0);
  double last = 0;
  for (double T = 0.1; T < 5; T += 0.1) {
    const double v = integrated_coincidence(one, g, T);
    EXPECT_GE(v, last);
    last = v;
  }
  // Triangle area of the band |t1 - t2| <= T inside a 4 x 4 square.
  EXPECT_NEAR(integrated_coincidence(one, g, 1.0), 16 - 9, 1e-12);
  EXPECT_THROW(integrated_coincidence(one, g, -1), domain_error);
}

TEST(Visibility, UndefinedWithoutOrthogonalCoincidences) {
  EXPECT_THROW(DetValues{}.visibility(), undefined_visibility_error);
  EXPECT_NEAR((DetValues{1, 1, 0.5, 0.5}.visibility()), 0.5, 1e-15);
}

TEST(Visibility, DeconstructionOrderingOnACoarseEnsemble) {
  VisibilityOptions opt;
  opt.record.dt = 1e-9;
  opt.k_max = 2;
  const std::vector<double> T = {0.25e-6, 1e-6, 5e-6, 17.5e-6};
  const auto a = preset("nodeA"), b = preset("nodeB");
  const auto full = model_visibility(a, b, T, visibility_mode::full, opt);
  const auto tech = model_visibility(a, b, T, visibility_mode::no_technical, opt);
  const auto pure = model_visibility(a, b, T, visibility_mode::pure, opt);
  for (std::size_t k = 0; k < T.size(); ++k) {
    EXPECT_GE(pure[k], tech[k] - 1e-12);
    EXPECT_GE(tech[k], full[k] - 1e-12);
    if (k > 0) EXPECT_LE(full[k], full[k - 1] + 1e-12);
  }
}

TEST(Detectors, MeasuredTableLayout) {
  const auto t = measured_detectors();
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(t.det[t.index(polarization::h, output::r)].name, "SPCM1");
  EXPECT_EQ(t.det[t.index(polarization::v, output::u)].name, "SNSPD2");
  const auto swapped = measured_detectors(false);
  EXPECT_EQ(swapped.det[swapped.index(polarization::h, output::u)].name, "SNSPD2");
  EXPECT_THROW(t.index("APD"), domain_error);
}

TEST(Detectors, CalibrationRecoversConsistentData) {
  DetectorTable t = measured_detectors();
  const EmissionProbabilities a{0.3, 0.2}, b{0.25, 0.35};
  const double eff[4] = {0.6, 0.45, 1.0, 0.8}, qa = 0.05, qb = 0.2;
  for (int r = 0; r < 4; ++r) {
    const bool v = t.det[r].pol == polarization::v;
    t.det[r].p_A = qa * eff[r] * 0.5 * (v ? a.P_V : a.P_H);
    t.det[r].p_B = qb * eff[r] * 0.5 * (v ? b.P_V : b.P_H);
  }
  const auto c = calibrate_efficiencies(t, a, b);
  for (int r = 0; r < 4; ++r) EXPECT_NEAR(c.det[r].efficiency, eff[r], 1e-12);
  EXPECT_NEAR(c.path_A[0], qa, 1e-12);
  EXPECT_NEAR(c.path_B[1], qb, 1e-12);
  t.det[0].p_A = 0;
  EXPECT_THROW(calibrate_efficiencies(t, a, b), domain_error);
}

TEST(Detectors, EfficiencyPairsFollowOutputs) {
  DetectorTable t = measured_detectors();
  for (int r = 0; r < 4; ++r) t.det[r].efficiency = 0.5 + 0.1 * r;
  const auto e = EffPair::from(t);
  // SNSPD2 (v, u) with SPCM1 (h, r).
  EXPECT_NEAR(e.vh, 0.8 * 0.5, 1e-15);
  EXPECT_NEAR(e.hh, 0.7 * 0.5, 1e-15);
}

TEST(Coincidence, OrthogonalRatesAreSymmetricProducts) {
  PhotonKernels a, b;
  const KernelGrid g{0, 1, 3};
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.1, 1);
  for (auto *k : {&a.v, &a.h, &b.v, &b.h}) {
    k->grid = g;
    k->G = Eigen::MatrixXcd::Zero(3, 3);
    for (int i = 0; i < 3; ++i) k->G(i, i) = u(rng);
  }
  const auto r = coincidence_rates(a, 0.5, b, 0.5);
  EXPECT_NEAR(r.det_vh(0, 2), 0.25 * (b.v.G(0, 0).real() * a.h.G(2, 2).real() + a.v.G(0, 0).real() * b.h.G(2, 2).real()), 1e-14);
  EXPECT_GE(r.det_hh.minCoeff(), 0);
}
