#include <doctest.h>

#include <cmath>

#include "posediff/diffusion.hpp"
#include "posediff/errors.hpp"
#include "test_util.hpp"

using namespace posediff;

TEST_CASE("make_schedule: direct product for constant beta") {
  DiffusionSchedule s = make_schedule(2, 0.5, 0.5);
  CHECK(s.alphaBarAt(1) == doctest::Approx(0.5));
  CHECK(s.alphaBarAt(2) == doctest::Approx(0.25));
}

TEST_CASE("make_schedule: default drives alpha_bar below 1e-3") {
  DiffusionSchedule s = default_schedule();
  CHECK(s.alphaBarAt(s.T) <= 1e-3);
}

TEST_CASE("make_schedule: alpha_bar strictly decreasing, beta monotone") {
  DiffusionSchedule s = make_schedule(50, 1e-4, 0.1);
  for (int t = 2; t <= s.T; ++t) {
    CHECK(s.alphaBarAt(t) < s.alphaBarAt(t - 1));
    CHECK(s.betaAt(t) >= s.betaAt(t - 1));
  }
}

TEST_CASE("make_schedule: rejects bad parameters") {
  CHECK_THROWS_AS(make_schedule(1, 0.1, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.1, 1.0), ConfigError);
}

TEST_CASE("noise_sample: zero-noise mean term") {
  DiffusionSchedule s = make_schedule(2, 0.5, 0.5);
  Eigen::VectorXd x0 = Eigen::VectorXd::Ones(1);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
  // alpha_bar(2) = 0.25 -> sqrt = 0.5
  CHECK(noise_sample(x0, 2, s, z)(0) == doctest::Approx(0.5));
}

TEST_CASE("noise_sample: t out of range") {
  DiffusionSchedule s = make_schedule(10, 1e-3, 0.1);
  Eigen::VectorXd x0 = Eigen::VectorXd::Ones(2);
  Rng rng(1);
  CHECK_THROWS_AS(noise_sample(x0, 0, s, rng), DataError);
  CHECK_THROWS_AS(noise_sample(x0, 11, s, rng), DataError);
}

TEST_CASE("noise_sample: terminal marginal is approximately standard normal") {
  DiffusionSchedule s = default_schedule();
  Rng rng(99);
  const int n = 100000;
  Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 3.0);
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = noise_sample(x0, s.T, s, rng)(0);
    sum += v;
    sum2 += v * v;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("single-step composition matches the closed-form marginal") {
  // brute-force oracle: compose q(x_t | x_{t-1}) steps from x0
  DiffusionSchedule s = make_schedule(10, 0.05, 0.3);
  Rng rng(1234);
  const int n = 100000;
  const double x0 = 1.7;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = x0;
    for (int t = 1; t <= s.T; ++t) {
      x = std::sqrt(1.0 - s.betaAt(t)) * x +
          std::sqrt(s.betaAt(t)) * rng.normal();
    }
    sum += x;
    sum2 += x * x;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  double want_mean = std::sqrt(s.alphaBarAt(s.T)) * x0;
  double want_var = 1.0 - s.alphaBarAt(s.T);
  CHECK(std::abs(mean - want_mean) < 0.02 * std::max(1.0, std::abs(want_mean)));
  CHECK(std::abs(var - want_var) < 0.02 * want_var);
}

TEST_CASE("ddpm_sample: constant denoiser with terminal step returns it") {
  DiffusionSchedule s = make_schedule(5, 0.1, 0.3);
  Eigen::VectorXd c(kCameraParams);
  c << 0.1, 1.0, 0.0, 0.0, 0.0, 0.5, -0.5, 2.0;
  DenoiseFn fn = [&](const Eigen::VectorXd&, int) { return c; };
  Rng rng(5);
  PoseTuple out = ddpm_sample(fn, s, 1, rng);
  // final step injects no noise, so the output equals c exactly
  CHECK((out.flat() - c).norm() < 1e-12);
}

TEST_CASE("ddpm_sample: fixed seed reproduces bitwise") {
  DiffusionSchedule s = make_schedule(20, 1e-3, 0.2);
  DenoiseFn fn = [](const Eigen::VectorXd& x, int) {
    return (0.9 * x).eval();
  };
  Rng r1(77), r2(77);
  Eigen::VectorXd a = ddpm_sample(fn, s, 3, r1).flat();
  Eigen::VectorXd b = ddpm_sample(fn, s, 3, r2).flat();
  CHECK(a == b);
}

TEST_CASE("ddpm_sample: output decodes to valid cameras") {
  DiffusionSchedule s = default_schedule();
  DenoiseFn fn = [](const Eigen::VectorXd& x, int) {
    return (0.5 * x).eval();
  };
  Rng rng(8);
  PoseTuple out = ddpm_sample(fn, s, 4, rng);
  for (const auto& cam : out.cameras) {
    CHECK(std::abs(cam.extrinsics.rotation.norm() - 1.0) < 1e-9);
    CHECK(cam.intrinsics.focal() > 0.0);
  }
}

TEST_CASE("ddpm_sample: non-finite denoiser aborts with step index") {
  DiffusionSchedule s = make_schedule(5, 0.1, 0.3);
  DenoiseFn fn = [](const Eigen::VectorXd& x, int) {
    Eigen::VectorXd bad = x;
    bad(0) = std::nan("");
    return bad;
  };
  Rng rng(3);
  CHECK_THROWS_WITH_AS(ddpm_sample(fn, s, 1, rng),
                       doctest::Contains("step 5"), NumericError);
}

TEST_CASE("pose tuple: flat round trip up to quaternion sign") {
  Rng rng(21);
  PoseTuple tuple;
  for (int i = 0; i < 3; ++i) {
    tuple.cameras.push_back(testutil::randomCamera(rng));
  }
  PoseTuple back = PoseTuple::fromFlat(tuple.flat());
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(std::abs(back.cameras[i].extrinsics.rotation.dot(
              tuple.cameras[i].extrinsics.rotation)) -
                   1.0) < 1e-9);
  }
}
