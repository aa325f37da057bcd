#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace sidelink;

TEST(Steering, BroadsideIsAllOnes) {
  const auto array = test::default_array();
  const CVec v = steering_x(array, 0.0, 0.0);
  for (Eigen::Index i = 0; i < v.size(); ++i) EXPECT_NEAR(std::abs(v[i] - cplx(1.0, 0.0)), 0.0, 1e-15);
}

TEST(Steering, HalfWavelengthEndfireAlternates) {
  const auto array = test::default_array();
  const CVec v = steering_x(array, kPi / 2, 0.0);
  for (Eigen::Index n = 0; n < v.size(); ++n)
    EXPECT_NEAR(std::abs(v[n] - cplx(n % 2 ? -1.0 : 1.0, 0.0)), 0.0, 1e-12);
}

TEST(Steering, UnitModulus) {
  const auto array = test::default_array();
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double az = rng.uniform(-kPi, kPi), el = rng.uniform(-kPi / 2, kPi / 2);
    for (const CVec& v : {steering_x(array, az, el), steering_z(array, az, el)})
      for (Eigen::Index n = 0; n < v.size(); ++n) EXPECT_NEAR(std::abs(v[n]), 1.0, 1e-14);
  }
}

TEST(DelaySteering, ZeroDelayIsAllOnes) {
  const CVec d = delay_steering(test::default_ofdm(), 0.0);
  EXPECT_NEAR((d - CVec::Ones(d.size())).norm(), 0.0, 1e-15);
}

TEST(DelaySteering, OneResolutionCellTurnsOnceAcrossBand) {
  const auto ofdm = test::default_ofdm();
  const CVec d = delay_steering(ofdm, ofdm.delay_resolution());
  const double step = -kTwoPi / ofdm.subcarriers;
  for (int k = 1; k < ofdm.subcarriers; ++k)
    EXPECT_NEAR(std::arg(d[k] / d[k - 1]), step, 1e-12);
}

TEST(DelaySteering, DistantDelaysAreNearlyOrthogonal) {
  const auto ofdm = test::default_ofdm();
  const double cell = ofdm.delay_resolution();
  const CVec a = delay_steering(ofdm, 100e-9);
  const CVec b = delay_steering(ofdm, 100e-9 + 20.5 * cell);
  cplx acc = 0.0;
  for (int k = 0; k < ofdm.subcarriers; ++k) acc += std::conj(a[k]) * b[k];
  EXPECT_LT(std::abs(acc), 0.05 * ofdm.subcarriers);
  EXPECT_NEAR(std::abs(acc), std::abs(a.dot(b)), 1e-9);
}

TEST(Synthesize, NoiseOnlyVariance) {
  const auto array = test::default_array();
  const auto ofdm = test::default_ofdm();
  const double n0 = ofdm.effective_noise_variance();
  const ObservationTensor y = synthesize({}, array, ofdm, 42);
  const double n = double(y.data.size());
  const double var = y.data.squaredNorm() / n;
  // |z|^2 ~ Exp(n0): the sample mean has std n0 / sqrt(n).
  EXPECT_NEAR(var, n0, 3.0 * n0 / std::sqrt(n));
  EXPECT_EQ(y.noise_variance, n0);
}

TEST(Synthesize, SinglePathIsRankOne) {
  const auto array = test::default_array();
  const auto ofdm = test::default_ofdm();
  const std::vector<PathParams> p{test::make_path(150e-9, 20.0, -15.0, {0.3, -0.2})};
  const ObservationTensor y = synthesize(p, array, ofdm, 1, 0.0);
  for (int mode = 1; mode <= 3; ++mode) EXPECT_LT(test::second_singular_ratio(y.unfold(mode)), 1e-10);
}

// Two delays behind one steering pair: the tensor is a_z o a_x o (g1 d1 + g2 d2),
// so every unfolding is rank 1 and plain CPD cannot separate them.
TEST(Synthesize, SharedAnglesCollapseToRankOne) {
  const auto array = test::default_array();
  const auto ofdm = test::default_ofdm();
  const std::vector<PathParams> p{test::make_path(150e-9, 20.0, -15.0),
                                  test::make_path(260e-9, 20.0, -15.0, {0.0, 0.5})};
  const ObservationTensor y = synthesize(p, array, ofdm, 1, 0.0);
  for (int mode = 1; mode <= 3; ++mode) EXPECT_EQ(test::numerical_rank(y.unfold(mode)), 1) << mode;
}

TEST(Synthesize, NoiselessIsLinearInPaths) {
  const auto array = test::default_array();
  const auto ofdm = test::default_ofdm();
  const PathParams a = test::make_path(90e-9, -30.0, 5.0, {1.0, 2.0});
  const PathParams b = test::make_path(310e-9, 40.0, -25.0, {-0.5, 0.1});
  const auto ya = synthesize(std::vector{a}, array, ofdm, 1, 0.0);
  const auto yb = synthesize(std::vector{b}, array, ofdm, 1, 0.0);
  const auto yab = synthesize(std::vector{a, b}, array, ofdm, 1, 0.0);
  EXPECT_LT((yab.data - ya.data - yb.data).norm(), 1e-12 * yab.data.norm());
}

TEST(Synthesize, UnitGainEnergy) {
  const auto array = test::default_array();
  const auto ofdm = test::default_ofdm();
  const auto y = synthesize(std::vector{test::make_path(1e-7, 10.0, 10.0)}, array, ofdm, 1, 0.0);
  EXPECT_NEAR(y.data.squaredNorm(), double(array.elements() * ofdm.subcarriers), 1e-8);
}

TEST(Synthesize, RejectsBadConfig) {
  auto array = test::default_array();
  array.n_x = 0;
  EXPECT_THROW(synthesize({}, array, test::default_ofdm(), 1), InvalidInput);
  EXPECT_THROW(synthesize({}, test::default_array(), test::default_ofdm(), 1, -1.0), InvalidInput);
}

TEST(Rtt, SymmetricExchangeAtSeventyMeters) {
  const double tau = 70.0 / kSpeedOfLight;
  const RttRange r = rtt_range(make_rtt_exchange(tau, tau, 0.5e-3, 0.0));
  EXPECT_NEAR(r.meters, 70.0, 1e-6);
  EXPECT_FALSE(r.degenerate);
}

TEST(Rtt, ClockBiasCancelsExactly) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double t1 = rng.uniform(1e-8, 1e-6), t2 = rng.uniform(1e-8, 1e-6);
    const double bias = rng.uniform(-1e-3, 1e-3);
    const RttRange a = rtt_range(make_rtt_exchange(t1, t2, 0.5e-3, 0.0));
    const RttRange b = rtt_range(make_rtt_exchange(t1, t2, 0.5e-3, bias));
    EXPECT_EQ(a.meters, b.meters);
  }
}

TEST(Rtt, NegativeRangeIsDegenerate) {
  EXPECT_TRUE(rtt_range(make_rtt_exchange(-2e-7, -1e-7, 1e-4, 0.0)).degenerate);
}

TEST(Rtt, RangeNoiseScalesAsOneOverRootTwo) {
  const double tau = 50.0 / kSpeedOfLight, sigma = 1e-9;
  Rng rng(8);
  const int n = 20000;
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r =
        rtt_range(make_rtt_exchange(tau + sigma * rng.normal(), tau + sigma * rng.normal(), 1e-4,
                                    rng.uniform(-1e-3, 1e-3)))
            .meters;
    acc += r;
    acc2 += r * r;
  }
  const double mean = acc / n;
  const double sd = std::sqrt(acc2 / n - mean * mean);
  const double expect = kSpeedOfLight * sigma / std::sqrt(2.0);
  EXPECT_NEAR(sd, expect, 0.03 * expect);
  EXPECT_NEAR(mean, 50.0, 4.0 * expect / std::sqrt(double(n)));
}

TEST(TensorIo, RoundTrip) {
  const auto array = test::default_array();
  const auto ofdm = test::default_ofdm();
  const auto y = synthesize(std::vector{test::make_path(1e-7, 10.0, 10.0)}, array, ofdm, 5);
  const auto path = std::filesystem::temp_directory_path() / "sidelink_tensor_roundtrip.bin";
  write_tensor(path.string(), y);
  const auto back = read_tensor(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back.n_z, y.n_z);
  EXPECT_EQ(back.n_x, y.n_x);
  EXPECT_EQ(back.subcarriers, y.subcarriers);
  EXPECT_EQ(back.noise_variance, y.noise_variance);
  EXPECT_TRUE(back.data == y.data);
}

TEST(TensorIo, MissingFileIsIoError) {
  EXPECT_THROW(read_tensor("/nonexistent/dir/t.bin"), IoError);
}
