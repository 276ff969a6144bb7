#include <gtest/gtest.h>

#include <set>

#include <ionnet/tomography.hpp>

#include "oracles.hpp"

using namespace ionnet;

namespace {

Matrix4c random_state(std::mt19937_64 &g, int rank) {
  std::normal_distribution<double> n;
  Eigen::Matrix<cd, 4, Eigen::Dynamic> a(4, rank);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < rank; ++j) a(i, j) = cd(n(g), n(g));
  Matrix4c m = a * a.adjoint();
  return m / m.trace().real();
}

CountsRecord uniform_counts(std::int64_t n) {
  CountsRecord c;
  for (const auto &s : setting_names()) c.counts[s] = {n, n, n, n};
  return c;
}

} // namespace

TEST(Projectors, EachSettingIsAResolutionOfIdentity) {
  for (const auto &s : setting_names()) {
    const auto p = setting_projectors(s);
    Matrix4c sum = Matrix4c::Zero();
    for (const auto &x : p) {
      sum += x;
      EXPECT_LT((x * x - x).norm(), 1e-14) << s;
    }
    EXPECT_LT((sum - Matrix4c::Identity()).norm(), 1e-14) << s;
  }
}

TEST(Projectors, BellStateCorrelations) {
  // Psi+ with phi = 0: ZZ always anticorrelated, XX and YY correlated.
  const Matrix4c rho = bell_projector(+1, 0);
  auto prob = [&](const std::string &s, int k) { return (setting_projectors(s)[k] * rho).trace().real(); };
  EXPECT_NEAR(prob("ZZ", 1) + prob("ZZ", 2), 1, 1e-14);
  EXPECT_NEAR(prob("XX", 0) + prob("XX", 3), 1, 1e-14);
  EXPECT_NEAR(prob("YY", 0) + prob("YY", 3), 1, 1e-14);
}

TEST(Mle, BellStateFromMillionCountsHasHighFidelity) {
  std::mt19937_64 g(1);
  const auto c = sample_counts(bell_projector(+1, 0), 1000000 / 9, g);
  const auto r = mle_reconstruct_detail(c);
  EXPECT_GT(optimize_phase(r.rho, +1).F, 0.999);
  EXPECT_NO_THROW(check_state(r.rho, 1e-9));
}

TEST(Mle, RotatedBellStateFidelityWithinBinomialSpread) {
  // With phi != 0 the XX, XY, YX, YY correlators are not +-1 and carry binomial noise
  // of variance c^2 s^2 / n per setting. The estimate is capped at F = 1, so its
  // infidelity is first order in that noise: sigma_F = sqrt(2 * 2 c^2 s^2 / n) / 4.
  const double phi = 0.7, n = 1000000 / 9;
  const double cs = std::cos(phi) * std::sin(phi);
  const double sigma_f = std::sqrt(4 * cs * cs / n) / 4;
  std::mt19937_64 g(1);
  const auto c = sample_counts(bell_projector(+1, phi), std::int64_t(n), g);
  const auto opt = optimize_phase(mle_reconstruct(c), +1);
  EXPECT_GT(opt.F, 1 - 4 * sigma_f);
  EXPECT_NEAR(opt.phi, phi, 0.02);
}

TEST(Mle, UniformCountsGiveTheMaximallyMixedState) {
  const Matrix4c rho = mle_reconstruct(uniform_counts(250));
  EXPECT_LT(oracle::trace_distance(rho, Matrix4c::Identity() / 4), 1e-3);
}

TEST(Mle, RandomStatesAreRecovered) {
  std::mt19937_64 g(17);
  for (int k = 0; k < 10; ++k) {
    const Matrix4c truth = random_state(g, 1 + k % 4);
    const auto c = sample_counts(truth, 100000, g);
    const Matrix4c est = mle_reconstruct(c);
    EXPECT_LT(oracle::trace_distance(est, truth), 0.02) << k;
  }
}

TEST(Mle, AgreesWithFixedPointIteration) {
  std::mt19937_64 g(4);
  const Matrix4c truth = 0.8 * bell_projector(-1, 1.1) + 0.2 * Matrix4c::Identity() / 4;
  const auto c = sample_counts(truth, 500, g);
  const auto apg = mle_reconstruct_detail(c);
  const Matrix4c rrr = mle_rrr(c);
  EXPECT_LT(oracle::trace_distance(apg.rho, rrr), 1e-3);
  EXPECT_LE(apg.neg_log_likelihood, negative_log_likelihood(c, rrr) + 1e-9);
}

TEST(Mle, LikelihoodIsMaximalAtTheEstimate) {
  std::mt19937_64 g(9);
  const auto c = sample_counts(random_state(g, 2), 300, g);
  const Matrix4c est = mle_reconstruct(c);
  const double f0 = negative_log_likelihood(c, est);
  for (int k = 0; k < 20; ++k) {
    const Matrix4c other = 0.97 * est + 0.03 * random_state(g, 4);
    EXPECT_GE(negative_log_likelihood(c, other), f0 - 1e-9);
  }
}

TEST(Mle, IterationBudgetExhaustionIsReported) {
  MleOptions opt;
  opt.max_iterations = 1;
  std::mt19937_64 g(2);
  EXPECT_THROW(mle_reconstruct(sample_counts(random_state(g, 1), 1000, g), opt), estimation_error);
}

TEST(Counts, ValidationAndJsonRoundTrip) {
  auto c = uniform_counts(3);
  c.counts["XY"] = {1, 2, 3, 4};
  const auto back = counts_from_json(counts_to_json(c));
  EXPECT_EQ(back.counts, c.counts);
  auto missing = c;
  missing.counts.erase("ZZ");
  EXPECT_THROW(missing.validate(), domain_error);
  auto empty = c;
  empty.counts["XX"] = {0, 0, 0, 0};
  EXPECT_THROW(empty.validate(), domain_error);
  auto negative = c;
  negative.counts["YZ"] = {1, -1, 0, 0};
  EXPECT_THROW(negative.validate(), domain_error);
  EXPECT_THROW(counts_from_json(nlohmann::json{{"XX", {1, 2}}}), config_error);
}

TEST(Phase, ClosedFormMatchesDenseGridSearch) {
  std::mt19937_64 g(23);
  for (int k = 0; k < 5; ++k) {
    const Matrix4c rho = random_state(g, 2);
    for (int sign : {+1, -1}) {
      const auto opt = optimize_phase(rho, sign);
      double best = -1, best_phi = 0;
      for (int i = 0; i < 10000; ++i) {
        const double phi = two_pi * i / 10000;
        const double f = bell_fidelity(rho, sign, phi);
        if (f > best) {
          best = f;
          best_phi = phi;
        }
      }
      EXPECT_GE(opt.F, best - 1e-12);
      EXPECT_NEAR(opt.F, best, 1e-6);
      const double d = std::remainder(opt.phi - best_phi, two_pi);
      EXPECT_LT(std::abs(d), 2 * two_pi / 10000);
    }
  }
}

TEST(Phase, FidelityIsSinusoidalInPhi) {
  std::mt19937_64 g(31);
  const Matrix4c rho = random_state(g, 3);
  const auto opt = optimize_phase(rho, +1);
  const double mid = 0.5 * (rho(DpD, DpD) + rho(DDp, DDp)).real();
  const double amp = opt.F - mid;
  for (double x : {0.3, 1.2, 2.9, 4.4})
    EXPECT_NEAR(bell_fidelity(rho, +1, opt.phi + x), mid + amp * std::cos(x), 1e-12);
}

TEST(Resampling, DeterministicForAFixedSeed) {
  std::mt19937_64 g(6);
  const auto c = sample_counts(0.9 * bell_projector(1, 0) + 0.1 * Matrix4c::Identity() / 4, 400, g);
  const auto a = resample_uncertainty(c, {}, 50, 99, 4);
  const auto b = resample_uncertainty(c, {}, 50, 99, 1);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.upper, b.upper);
  const auto other = resample_uncertainty(c, {}, 50, 100, 4);
  EXPECT_NE(a.samples, other.samples);
  EXPECT_THROW(resample_uncertainty(c, {}, 1, 99), domain_error);
}

TEST(Resampling, WidthScalesAsInverseSquareRootOfCounts) {
  const Matrix4c truth = 0.85 * bell_projector(1, 0.2) + 0.15 * Matrix4c::Identity() / 4;
  std::mt19937_64 g(12);
  const auto small = resample_uncertainty(sample_counts(truth, 2000, g), {}, 200, 5);
  const auto large = resample_uncertainty(sample_counts(truth, 8000, g), {}, 200, 5);
  EXPECT_NEAR(small.std / large.std, 2.0, 0.6);
}

TEST(Resampling, NearDeterministicCountsGiveSmallWidths) {
  const auto c = expected_counts(bell_projector(1, 0), 100000);
  const auto e = resample_uncertainty(c, {}, 200, 8);
  EXPECT_LT(e.upper + e.lower, 0.02);
  EXPECT_LT(e.std, 0.01);
  EXPECT_GT(e.value, 0.99);
}

TEST(Resampling, WidthsFollowTheMeanShiftedDefinition) {
  std::mt19937_64 g(44);
  const auto c = sample_counts(0.7 * bell_projector(-1, 0) + 0.3 * Matrix4c::Identity() / 4, 300, g);
  const auto e = resample_uncertainty(c, {-1, false, 0.0}, 30, 2);
  EXPECT_NEAR(e.upper, e.mean + e.std - e.value, 1e-15);
  EXPECT_NEAR(e.lower, e.value - e.mean + e.std, 1e-15);
  EXPECT_EQ(e.negative_width, e.upper < 0 || e.lower < 0);
  EXPECT_EQ(e.phi, 0.0);
}

TEST(Multinomial, PreservesTotalsAndMeans) {
  std::mt19937_64 g(3);
  const std::array<double, 4> p{0.1, 0.2, 0.3, 0.4};
  std::array<double, 4> mean{};
  for (int k = 0; k < 2000; ++k) {
    const auto x = multinomial(1000, p, g);
    ASSERT_EQ(x[0] + x[1] + x[2] + x[3], 1000);
    for (int i = 0; i < 4; ++i) mean[i] += x[i] / 2000.0;
  }
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(mean[i], 1000 * p[i], 3 * std::sqrt(1000 * p[i] * (1 - p[i]) / 2000) + 0.5);
}

TEST(UnitaryFit, RecoversAKnownRotation) {
  const Eigen::Matrix2cd u0 = euler_unitary(1.3, 2.1, -0.4);
  const auto in = polarization_inputs();
  std::array<Eigen::Matrix2cd, 6> out;
  std::vector<Eigen::Vector2cd> vin, vout;
  for (int k = 0; k < 6; ++k) {
    const Eigen::Vector2cd v = u0 * in[k];
    out[k] = v * v.adjoint();
    vin.push_back(in[k]);
    vout.push_back(v);
  }
  const auto fit = nearest_unitary_fit(out);
  EXPECT_NEAR(fit.mean_fidelity, 1, 1e-9);
  EXPECT_FALSE(fit.ill_conditioned);
  const Eigen::Matrix2cd polar = oracle::polar_fit(vin, vout);
  EXPECT_NEAR(std::abs((fit.U.adjoint() * polar).trace()) / 2, 1, 1e-6);
}

TEST(UnitaryFit, PartiallyDepolarizedChannelKeepsTheRotation) {
  const Eigen::Matrix2cd u0 = euler_unitary(-0.6, 0.9, 2.2);
  const auto in = polarization_inputs();
  std::array<Eigen::Matrix2cd, 6> out;
  const double p = 0.7;
  for (int k = 0; k < 6; ++k) {
    const Eigen::Vector2cd v = u0 * in[k];
    out[k] = p * v * v.adjoint() + (1 - p) * Eigen::Matrix2cd::Identity() / 2;
  }
  const auto fit = nearest_unitary_fit(out);
  EXPECT_NEAR(fit.mean_fidelity, p + (1 - p) / 2, 1e-9);
  EXPECT_NEAR(std::abs((fit.U.adjoint() * u0).trace()) / 2, 1, 1e-5);
}

TEST(UnitaryFit, IdentityAndFullyMixedChannels) {
  const auto in = polarization_inputs();
  std::array<Eigen::Matrix2cd, 6> out;
  for (int k = 0; k < 6; ++k) out[k] = in[k] * in[k].adjoint();
  EXPECT_NEAR(nearest_unitary_fit(out).mean_fidelity, 1, 1e-9);
  for (auto &o : out) o = Eigen::Matrix2cd::Identity() / 2;
  const auto mixed = nearest_unitary_fit(out);
  EXPECT_NEAR(mixed.mean_fidelity, 0.5, 1e-12);
  EXPECT_TRUE(mixed.ill_conditioned);
}

TEST(Seeds, TrialSeedsAreDistinct) {
  std::set<std::uint64_t> s;
  for (std::uint64_t k = 0; k < 1000; ++k) s.insert(trial_seed(7, k));
  EXPECT_EQ(s.size(), 1000u);
  EXPECT_NE(trial_seed(7, 0), trial_seed(8, 0));
}
