#include <gtest/gtest.h>

#include "epca/rng.hpp"
#include "epca/spherical.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/bessel.hpp>

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

using namespace epca;

namespace {

constexpr double kPi = std::numbers::pi;

Vector unit(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v / v.norm();
}

Matrix random_orthogonal(Index p, Rng& rng) {
  Matrix g(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < p; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ();
}

// Integral over S^1 by the trapezoid rule in the angle (spectral for periodic integrands).
template <class F>
double integrate_circle(F&& f, int n = 4000) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * kPi * i / n;
    s += f(unit({std::cos(a), std::sin(a)}));
  }
  return s * 2.0 * kPi / n;
}

// Integral over S^2: Gauss-Legendre in the polar cosine, trapezoid in the azimuth.
template <class F>
double integrate_sphere(F&& f, int n_phi = 400) {
  return boost::math::quadrature::gauss<double, 100>::integrate(
      [&](double t) {
        const double r = std::sqrt(std::max(0.0, 1.0 - t * t));
        double s = 0.0;
        for (int i = 0; i < n_phi; ++i) {
          const double a = 2.0 * kPi * i / n_phi;
          Vector z(3);
          z << r * std::cos(a), r * std::sin(a), t;
          s += f(z);
        }
        return s * 2.0 * kPi / n_phi;
      },
      -1.0, 1.0);
}

double mean_resultant_length(const Vector& mu, double kappa, int n, Rng& rng) {
  Vector s = Vector::Zero(mu.size());
  for (int i = 0; i < n; ++i) s += vmf_sample(mu, kappa, rng);
  return s.norm() / n;
}

struct CaptureLog {
  std::vector<std::string> warnings;
  CaptureLog() {
    set_log_sink([this](LogLevel l, const std::string& m) {
      if (l == LogLevel::warn) warnings.push_back(m);
    });
  }
  ~CaptureLog() { set_log_sink([](LogLevel, const std::string&) {}); }
};

}  // namespace

TEST(LogBessel, MatchesReference) {
  for (double nu : {0.0, 0.5, 1.0, 5.0, 22.0})
    for (double x : {1e-3, 0.1, 1.0, 10.0, 39.0, 41.0, 100.0, 600.0, 700.0}) {
      const double ref = std::log(boost::math::cyl_bessel_i(nu, x));
      EXPECT_NEAR(log_bessel_i(nu, x), ref, 1e-11 * std::max(1.0, std::abs(ref))) << "nu=" << nu << " x=" << x;
    }
}

TEST(LogBessel, BranchesAgreeAndStayFinite) {
  for (double nu : {0.0, 5.0, 22.0})
    for (double x : {1e3, 5e3}) {
      const double a = detail::log_bessel_i_series(nu, x), b = detail::log_bessel_i_asymptotic(nu, x);
      EXPECT_NEAR(a, b, 1e-12 * a) << "nu=" << nu << " x=" << x;
    }
  double last = -1e300;
  for (double x : {700.0, 1e3, 5e3, 1e4, 1e5}) {
    const double v = log_bessel_i(22.0, x);
    ASSERT_TRUE(std::isfinite(v));
    EXPECT_GT(v, last);
    last = v;
  }
}

TEST(VmfDensity, CircleUniformLimit) {
  const Vector mu = unit({1, 0});
  for (double a : {0.0, 1.0, 2.5})
    EXPECT_NEAR(std::exp(vmf_log_density(unit({std::cos(a), std::sin(a)}), mu, 1e-9)), 1.0 / (2.0 * kPi), 1e-9);
  EXPECT_NEAR(std::exp(vmf_log_normalizer(2, 0.0)), 1.0 / (2.0 * kPi), 1e-15);
  EXPECT_NEAR(std::exp(vmf_log_normalizer(3, 0.0)), 1.0 / (4.0 * kPi), 1e-15);
}

TEST(VmfDensity, IntegratesToOne) {
  for (double kappa : {0.5, 2.0, 10.0}) {
    const Vector m2 = unit({0.3, -1.0});
    const Vector m3 = unit({0.2, 0.5, -0.7});
    EXPECT_NEAR(integrate_circle([&](const Vector& z) { return std::exp(vmf_log_density(z, m2, kappa)); }), 1.0, 1e-6);
    EXPECT_NEAR(integrate_sphere([&](const Vector& z) { return std::exp(vmf_log_density(z, m3, kappa)); }), 1.0, 1e-6);
  }
}

TEST(VmfDensity, ModeAndErrors) {
  Rng rng(30);
  const Vector mu = unit({1, 2, 3, 4});
  const double top = vmf_log_density(mu, mu, 3.0);
  for (int i = 0; i < 100; ++i) EXPECT_LE(vmf_log_density(uniform_sphere(4, rng), mu, 3.0), top);
  EXPECT_THROW(vmf_log_density(mu, mu, 0.0), Error);
  EXPECT_THROW(vmf_log_density(mu, mu, -1.0), Error);
}

TEST(VmfDensity, RotationEquivariance) {
  Rng rng(31);
  for (Index p : {2, 3, 7}) {
    const Matrix r = random_orthogonal(p, rng);
    for (int i = 0; i < 20; ++i) {
      const Vector z = uniform_sphere(p, rng), mu = uniform_sphere(p, rng);
      const Vector rz = r * z, rmu = r * mu;
      EXPECT_NEAR(vmf_log_density(rz, rmu, 4.0), vmf_log_density(z, mu, 4.0), 1e-12);
    }
  }
}

TEST(VmfSample, UnitNormAndUniformCase) {
  Rng rng(32);
  const Vector mu = unit({0, 0, 1});
  Vector mean = Vector::Zero(3);
  for (int i = 0; i < 100000; ++i) {
    const Vector z = vmf_sample(mu, 0.0, rng);
    ASSERT_NEAR(z.norm(), 1.0, 1e-12);
    mean += z;
  }
  mean /= 100000.0;
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(mean(k), 0.0, 0.01);
}

TEST(VmfSample, MeanResultantLength) {
  Rng rng(33);
  const Vector mu = unit({1, -1, 0.5});
  for (double kappa : {0.5, 5.0, 20.0})
    EXPECT_NEAR(mean_resultant_length(mu, kappa, 100000, rng), 1.0 / std::tanh(kappa) - 1.0 / kappa, 0.01);
  // Higher dimension: A_p(kappa) = I_{p/2}(kappa) / I_{p/2-1}(kappa).
  const Vector mu10 = uniform_sphere(10, rng);
  const double a10 = boost::math::cyl_bessel_i(5.0, 5.0) / boost::math::cyl_bessel_i(4.0, 5.0);
  EXPECT_NEAR(mean_resultant_length(mu10, 5.0, 50000, rng), a10, 0.01);
}

TEST(VmfSample, CosineDistributionKs) {
  Rng rng(34);
  const double kappa = 5.0;
  const Vector mu = unit({0.4, 0.1, -0.9});
  std::vector<double> t(100000);
  for (auto& x : t) x = vmf_sample(mu, kappa, rng).dot(mu);
  std::sort(t.begin(), t.end());
  // p = 3: the cosine has density proportional to exp(kappa t) on [-1, 1].
  auto cdf = [&](double x) { return std::expm1(kappa * (x + 1.0)) / std::expm1(2.0 * kappa); };
  double d = 0.0;
  const double n = static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double f = cdf(t[i]);
    d = std::max({d, std::abs(f - i / n), std::abs((i + 1) / n - f)});
  }
  EXPECT_LT(d, 0.01);
}

TEST(KdeFit, AntipodalPointsGiveFlatKernel) {
  Matrix pts(2, 2);
  pts << 1, 0, -1, 0;
  const auto k = kde_fit(pts);
  EXPECT_FALSE(k.kappa_capped);
  EXPECT_LT(k.kappa, 0.1);
  EXPECT_GT(k.kappa, 0.0);
}

TEST(KdeFit, RecoversConcentration) {
  Rng rng(35);
  const Vector mu = unit({1, 1, 1});
  Matrix pts(200, 3);
  for (Index i = 0; i < 200; ++i) pts.row(i) = vmf_sample(mu, 20.0, rng).transpose();
  const auto k = kde_fit(pts);
  // The kernel is narrower than the population it smooths: kappa-hat sits
  // above 20, within one order of magnitude.
  EXPECT_GE(k.kappa, 20.0);
  EXPECT_LE(k.kappa, 200.0);
  const Matrix gram = pts * pts.transpose();
  const double at = kde_loo_objective(gram, 3, k.kappa);
  EXPECT_NEAR(at, k.loo_objective, 1e-9 * std::abs(at));
  EXPECT_GE(at, kde_loo_objective(gram, 3, 0.5 * k.kappa));
  EXPECT_GE(at, kde_loo_objective(gram, 3, 2.0 * k.kappa));
}

TEST(KdeFit, LooOptimumOnRandomData) {
  Rng rng(36);
  for (Index p : {2, 4, 8}) {
    Matrix pts(60, p);
    const Vector mu = uniform_sphere(p, rng);
    for (Index i = 0; i < pts.rows(); ++i) pts.row(i) = vmf_sample(mu, 3.0 * static_cast<double>(p), rng).transpose();
    const auto k = kde_fit(pts);
    const Matrix gram = pts * pts.transpose();
    EXPECT_GE(k.loo_objective, kde_loo_objective(gram, p, 0.5 * k.kappa));
    EXPECT_GE(k.loo_objective, kde_loo_objective(gram, p, 2.0 * k.kappa));
  }
}

TEST(KdeFit, TightClusterIsCapped) {
  CaptureLog cap;
  Rng rng(37);
  Matrix pts(10, 3);
  for (Index i = 0; i < 10; ++i) {
    Vector z(3);
    z << 1.0, 1e-7 * rng.normal(), 1e-7 * rng.normal();
    pts.row(i) = z.transpose() / z.norm();
  }
  const auto k = kde_fit(pts);
  EXPECT_TRUE(k.kappa_capped);
  EXPECT_EQ(k.kappa, 1e4);
  ASSERT_EQ(cap.warnings.size(), 1u);
  EXPECT_NE(cap.warnings[0].find("kappa_max"), std::string::npos);
}

TEST(KdeFit, Rejections) {
  EXPECT_THROW(kde_fit(Matrix::Ones(1, 3) / std::sqrt(3.0)), Error);
  EXPECT_THROW(kde_fit(Matrix::Ones(4, 3)), Error);
}

TEST(KdeSample, CenterFrequencies) {
  Rng rng(38);
  VmfKernel k;
  k.centers = Matrix::Identity(3, 3);
  k.kappa = 50.0;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 100000; ++i) {
    Index arg = 0;
    (k.centers * kde_sample(k, rng)).maxCoeff(&arg);
    ++counts[static_cast<std::size_t>(arg)];
  }
  for (int c : counts) EXPECT_NEAR(c / 100000.0, 1.0 / 3.0, 0.01);
}

TEST(KdeSample, ConcentrationLimitResamplesCenters) {
  Rng rng(39);
  VmfKernel k;
  k.centers.resize(4, 3);
  for (Index i = 0; i < 4; ++i) k.centers.row(i) = uniform_sphere(3, rng).transpose();
  k.kappa = 1e4;
  std::vector<double> best;
  for (int i = 0; i < 1000; ++i) best.push_back((k.centers * kde_sample(k, rng)).maxCoeff());
  std::sort(best.begin(), best.end());
  EXPECT_GT(best[best.size() / 2], 0.9999);
  EXPECT_GT(best.front(), 0.998);
}

TEST(KdeSample, SingleFlatCenterIsUniform) {
  Rng rng(40);
  VmfKernel k;
  k.centers = unit({0, 0, 1}).transpose();
  k.kappa = 0.0;
  Vector mean = Vector::Zero(3);
  for (int i = 0; i < 100000; ++i) mean += kde_sample(k, rng);
  mean /= 100000.0;
  for (Index j = 0; j < 3; ++j) EXPECT_NEAR(mean(j), 0.0, 0.01);
}

TEST(KdeDensity, IntegratesToOneOnCircleAndSphere) {
  Rng rng(41);
  for (double kappa : {0.5, 2.0, 10.0}) {
    VmfKernel k2, k3;
    k2.centers.resize(5, 2);
    k3.centers.resize(5, 3);
    for (Index i = 0; i < 5; ++i) {
      k2.centers.row(i) = uniform_sphere(2, rng).transpose();
      k3.centers.row(i) = uniform_sphere(3, rng).transpose();
    }
    k2.kappa = k3.kappa = kappa;
    EXPECT_NEAR(integrate_circle([&](const Vector& z) { return std::exp(kde_log_density(k2, z)); }), 1.0, 1e-6);
    EXPECT_NEAR(integrate_sphere([&](const Vector& z) { return std::exp(kde_log_density(k3, z)); }), 1.0, 1e-6);
  }
}
