#include <gtest/gtest.h>

#include "epca/generator.hpp"
#include "epca/rng.hpp"
#include "epca/synthetic.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <numbers>

using namespace epca;

namespace {

Matrix synthetic_frechet(Index sites, Index factors, Index rows, std::uint64_t seed) {
  Rng rng(seed, stage::synthetic, 0);
  const Matrix a = synthetic::with_noise(synthetic::loading_matrix(sites, factors, rng), 0.05);
  return synthetic::max_linear(a, rows, rng);
}

DataMatrix synthetic_panel(Index sites, Index rows, std::uint64_t seed) {
  const Matrix x = synthetic::to_data_scale(synthetic_frechet(sites, 3, rows, seed), synthetic::default_margins(sites));
  return panel_from_matrix(x, {}, 52.0);
}

GeneratorConfig small_config(Index m) {
  GeneratorConfig c;
  c.m = m;
  c.q_radial = 0.9;
  c.q_rv = 0.9;
  return c;
}

const GeneratorModel& shared_model() {
  static const GeneratorModel model = fit_generator(synthetic_panel(6, 2000, 1), {0.9, 0.93, 10}, small_config(2));
  return model;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

AngularSample tiny_angular(const Matrix& w, Index m) {
  AngularSample a;
  a.m = m;
  a.w = w;
  a.z.resize(w.rows(), m + 1);
  for (Index i = 0; i < w.rows(); ++i) a.z.row(i) = augment_angle(w.row(i).transpose(), m).transpose();
  return a;
}

}  // namespace

TEST(AugmentAngle, Examples) {
  const Vector a = augment_angle((Vector(3) << 0.6, 0.8, 0.0).finished(), 1);
  EXPECT_DOUBLE_EQ(a(0), 0.6);
  EXPECT_DOUBLE_EQ(a(1), 0.8);
  const Vector b = augment_angle((Vector(3) << 0.6, -0.8, 0.0).finished(), 1);
  EXPECT_DOUBLE_EQ(b(1), -0.8);
  const Vector c = augment_angle((Vector(3) << 0.6, 0.0, -0.8).finished(), 1);
  EXPECT_DOUBLE_EQ(c(1), 0.8);  // zero counts as positive
}

TEST(AugmentAngle, UnitNorm) {
  Rng rng(50);
  for (int i = 0; i < 200; ++i) {
    const Vector w = uniform_sphere(9, rng);
    for (Index m = 1; m < 9; ++m) EXPECT_NEAR(augment_angle(w, m).norm(), 1.0, 1e-12);
  }
}

TEST(BuildAngular, CountsAndErrors) {
  const Matrix f = synthetic_frechet(5, 2, 1000, 2);
  const Tpdm t = estimate_tpdm(f, 0.9);
  const Matrix s = pc_scores(f, t);
  const auto a = build_angular(s, 0.9, 2);
  EXPECT_EQ(a.size(), 100);
  EXPECT_EQ(a.z.cols(), 3);
  for (Index i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a.w.row(i).norm(), 1.0, 1e-12);
    EXPECT_GT(s.row(a.rows[static_cast<std::size_t>(i)]).norm(), a.r_v);
  }
  EXPECT_THROW(build_angular(s, 0.9, 0), Error);
  EXPECT_THROW(build_angular(s, 0.9, 5), Error);
  EXPECT_THROW(build_angular_at(s, 1e9, 2), Error);
}

TEST(NearestNeighbor, SelfMatchAndTies) {
  Matrix w(3, 3);
  w << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  const auto a = tiny_angular(w, 1);
  EXPECT_EQ(nearest_neighbor(a.z.row(0).transpose(), a), 0);
  // Rows 1 and 2 map to the same z = (0, 1): the lower index wins.
  EXPECT_EQ(nearest_neighbor(a.z.row(2).transpose(), a), 1);
  EXPECT_EQ(nearest_neighbor((Vector(2) << 0.0, 1.0).finished(), a), 1);
  EXPECT_EQ(nearest_neighbor((Vector(2) << 0.1, 0.99).finished(), a), 1);
}

TEST(NearestNeighbor, SeparatesNearDuplicates) {
  // Angle 1e-10 apart: 1 - cos is below double resolution.
  Matrix w(2, 3);
  w << 0.6, 0.8, 0.0, 0.6, 0.8 * std::cos(1e-10), 0.8 * std::sin(1e-10);
  const auto a = tiny_angular(w, 2);
  EXPECT_EQ(nearest_neighbor(a.z.row(0).transpose(), a), 0);
  EXPECT_EQ(nearest_neighbor(a.z.row(1).transpose(), a), 1);
}

TEST(NearestNeighbor, MatchesBruteForce) {
  const auto& a = shared_model().angular;
  Rng rng(51);
  for (int i = 0; i < 500; ++i) {
    const Vector z = uniform_sphere(a.m + 1, rng);
    Index best = 0;
    double bd = -2.0;
    for (Index j = 0; j < a.size(); ++j) {
      const double d = a.z.row(j).dot(z);
      if (d > bd) {
        bd = d;
        best = j;
      }
    }
    EXPECT_EQ(nearest_neighbor(z, a), best);
  }
}

TEST(ReconstructW, IdentityAnchor) {
  const auto& a = shared_model().angular;
  for (Index i = 0; i < a.size(); ++i) {
    const Vector z = a.z.row(i).transpose();
    const Index q = nearest_neighbor(z, a);
    const Vector w = reconstruct_w(z, q, a);
    EXPECT_LE((w - a.w.row(i).transpose()).cwiseAbs().maxCoeff(), 1e-15) << "row " << i;
  }
}

TEST(ReconstructW, NormAndCollinearity) {
  const auto& a = shared_model().angular;
  const Index K = a.w.cols(), m = a.m;
  Rng rng(52);
  std::map<Index, Vector> first;
  for (int i = 0; i < 2000; ++i) {
    const Vector z = uniform_sphere(m + 1, rng);
    ASSERT_NEAR(z.norm(), 1.0, 1e-12);
    const Index q = nearest_neighbor(z, a);
    const Vector w = reconstruct_w(z, q, a);
    EXPECT_NEAR(w.norm(), 1.0, 1e-10);
    const Vector tail = w.tail(K - m);
    const Vector ref = a.w.row(q).tail(K - m).transpose();
    // Residual block is a scalar multiple of the neighbour's block.
    EXPECT_NEAR(std::abs(tail.dot(ref)), tail.norm() * ref.norm(), 1e-12);
    first.emplace(q, tail);
  }
  EXPECT_GT(first.size(), 1u);
}

TEST(ReconstructW, ZeroResidual) {
  Matrix w(2, 3);
  w << 0.6, 0.8, 0.0, 0.0, 0.6, 0.8;
  const auto a = tiny_angular(w, 2);
  // Row 0 has z_{m+1} = 0; a draw with nonzero z_{m+1} falls back to a zero residual.
  ASSERT_EQ(a.z(0, 2), 0.0);
  const Vector z = (Vector(3) << 0.6, 0.79, std::sqrt(1.0 - 0.36 - 0.79 * 0.79)).finished();
  const Vector out = reconstruct_w(z, 0, a);
  EXPECT_EQ(out(2), 0.0);
  EXPECT_NEAR(out.norm(), 1.0, 1e-15);
  const Vector flat = (Vector(3) << 0.0, 1.0, 0.0).finished();
  EXPECT_EQ(reconstruct_w(flat, 1, a)(2), 0.0);
}

TEST(Radius, QuantileExamples) {
  for (double c : {1.0, 6.0, 45.0}) {
    EXPECT_NEAR(radius_quantile(c, std::exp(-1.0)), c, 1e-14 * c);
    EXPECT_NEAR(radius_quantile(c, std::exp(-4.0)), c / 2.0, 1e-14 * c);
  }
}

TEST(Radius, MonteCarloCdf) {
  Rng rng(53);
  const double c = 45.0;
  int below = 0;
  for (int i = 0; i < 100000; ++i) below += sample_radius(c, rng) <= c;
  EXPECT_NEAR(below / 100000.0, std::exp(-1.0), 0.005);
}

TEST(Radius, TruncatedDraws) {
  Rng rng(54);
  const double c = 3.0, r_min = 7.0;
  // Conditional CDF above r_min: (F(r) - F(r_min)) / (1 - F(r_min)).
  auto F = [&](double r) { return std::exp(-std::pow(r / c, -2.0)); };
  int below = 0;
  const double probe = 12.0;
  for (int i = 0; i < 100000; ++i) {
    const double r = sample_radius(c, rng, r_min);
    ASSERT_GT(r, r_min);
    below += r <= probe;
  }
  EXPECT_NEAR(below / 100000.0, (F(probe) - F(r_min)) / (1.0 - F(r_min)), 0.005);
  // Far above the bulk the truncated CDF still inverts without loss.
  EXPECT_GT(sample_radius(1.0, rng, 1e6), 1e6);
}

TEST(RadialScale, Laws) {
  const auto& t = shared_model().tpdm;
  EXPECT_DOUBLE_EQ(radial_scale(RadialScale::sites, t), 6.0);
  EXPECT_NEAR(radial_scale(RadialScale::tail_mass, t), std::sqrt(6.0), 1e-12);
  EXPECT_NEAR(shared_model().radial_scale, std::sqrt(6.0), 1e-12);
}

TEST(Generate, ShapeFinitenessAndDeterminism) {
  const auto& model = shared_model();
  Rng r1 = event_rng(9, 0), r2 = event_rng(9, 0);
  const auto a = generate(model, 4400, r1);
  const auto b = generate(model, 4400, r2);
  ASSERT_EQ(a.size(), 4400);
  EXPECT_EQ(a.events.cols(), 6);
  EXPECT_TRUE(a.events.allFinite());
  EXPECT_GT(a.latent.minCoeff(), 0.0);
  EXPECT_TRUE(bit_equal(a.events, b.events));
  EXPECT_TRUE(bit_equal(a.latent, b.latent));
  EXPECT_EQ(a.m, 2);
  Rng r3 = event_rng(9, 1);
  EXPECT_FALSE(bit_equal(a.events, generate(model, 4400, r3).events));
  Rng r4 = event_rng(9, 0);
  EXPECT_THROW(generate(model, 0, r4), Error);
}

TEST(Generate, PcNormEqualsRadius) {
  const auto& model = shared_model();
  Rng rng(55);
  Vector radii;
  const Matrix x = generate_standardised(model, 300, rng, 0.0, &radii);
  for (Index e = 0; e < x.rows(); ++e) {
    if (x.row(e).minCoeff() < 1e-6) continue;  // softplus inverse loses digits near zero
    Vector inv(x.cols());
    for (Index k = 0; k < x.cols(); ++k) inv(k) = softplus_inverse(x(e, k));
    const Vector v = model.tpdm.eigvecs.transpose() * inv;
    EXPECT_NEAR(v.norm(), radii(e), 1e-8 * radii(e));
  }
}

TEST(Generate, ConditioningOnRv) {
  const auto& model = shared_model();
  Rng rng(56);
  const auto set = generate(model, 500, rng, model.angular.r_v);
  EXPECT_GT(set.radii.minCoeff(), model.angular.r_v);
}

TEST(Generate, CollapsedModelSharesDirection) {
  GeneratorModel model = shared_model();
  AngularSample one;
  one.m = model.m();
  one.w = model.angular.w.topRows(1);
  one.z = model.angular.z.topRows(1);
  model.angular = one;
  model.kernel.centers = one.z;
  model.kernel.kappa = 1e4;
  Rng rng(57);
  Vector radii;
  const Matrix x = generate_standardised(model, 200, rng, 0.0, &radii);
  const Vector w1 = one.w.row(0).transpose();
  for (Index e = 0; e < x.rows(); ++e) {
    Rng d(58, 0, static_cast<std::uint64_t>(e));
    EXPECT_GT(sample_direction(model, d).dot(w1), 0.999);
  }
  EXPECT_GT(radii.maxCoeff() / radii.minCoeff(), 2.0);
}

TEST(AngularMiss, Ranges) {
  Matrix s(2, 3);
  s << 1, 2, 2, 0, 1, 0;
  EXPECT_NEAR(angular_miss((Vector(3) << 2, 4, 4).finished(), s), 0.0, 1e-15);
  Rng rng(59);
  for (int i = 0; i < 100; ++i) {
    Matrix pos(5, 4);
    for (Index j = 0; j < 5; ++j) pos.row(j) = uniform_sphere(4, rng).cwiseAbs().transpose();
    const double d = angular_miss(uniform_sphere(4, rng).cwiseAbs(), pos);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    const double g = angular_miss(uniform_sphere(4, rng), pos);
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, 2.0);
  }
}

TEST(SelectM, SingleMAndErrors) {
  const Matrix f = synthetic_frechet(6, 3, 600, 3);
  SelectMConfig cfg;
  cfg.m_grid = {1};
  cfg.samples_per_fold = 50;
  cfg.ci_resamples = 50;
  cfg.q_radial = 0.95;
  cfg.q_rv = 0.9;
  const auto res = select_m(f, cfg, 4);
  EXPECT_EQ(res.m_opt, 1);
  ASSERT_EQ(res.curve.size(), 1u);
  EXPECT_EQ(res.fold_errors.rows(), 30);
  EXPECT_LE(res.curve[0].lo, res.curve[0].dbar);
  EXPECT_GE(res.curve[0].hi, res.curve[0].dbar);
  for (Index i = 0; i < res.fold_errors.rows(); ++i) {
    EXPECT_GE(res.fold_errors(i, 0), 0.0);
    EXPECT_LE(res.fold_errors(i, 0), 1.0);
  }
  cfg.m_grid = {};
  EXPECT_THROW(select_m(f, cfg, 4), Error);
  cfg.m_grid = {6};
  EXPECT_THROW(select_m(f, cfg, 4), Error);
}

TEST(SelectM, DeterministicAcrossWorkers) {
  const Matrix f = synthetic_frechet(5, 2, 400, 5);
  SelectMConfig cfg;
  cfg.m_grid = {1, 2, 3};
  cfg.samples_per_fold = 40;
  cfg.ci_resamples = 30;
  cfg.q_radial = 0.95;
  cfg.q_rv = 0.9;
  const auto a = select_m(f, cfg, 6);
  cfg.jobs = 3;
  const auto b = select_m(f, cfg, 6);
  EXPECT_TRUE(bit_equal(a.fold_errors, b.fold_errors));
  EXPECT_EQ(a.m_opt, b.m_opt);
  ASSERT_EQ(a.curve.size(), 3u);
  for (std::size_t g = 0; g < 3; ++g) EXPECT_EQ(a.curve[g].lo, b.curve[g].lo);
}

TEST(Bootstrap, NoResampleEqualsGenerate) {
  const auto data = synthetic_panel(6, 2000, 1);
  const auto& point = shared_model();
  BootstrapConfig cfg;
  cfg.margins = {0.9, 0.93, 10};
  cfg.generator = small_config(2);
  cfg.n_replicates = 1;
  cfg.events_per_replicate = 300;
  cfg.resample = false;
  const auto sets = bootstrap_generate(data, point, cfg, 11);
  ASSERT_EQ(sets.size(), 1u);
  Rng rng = event_rng(11, 0);
  EXPECT_TRUE(bit_equal(sets[0].events, generate(point, 300, rng).events));
}

TEST(Bootstrap, DeterministicAndReplicatesDiffer) {
  const auto data = synthetic_panel(6, 2000, 1);
  const auto& point = shared_model();
  BootstrapConfig cfg;
  cfg.margins = {0.9, 0.93, 10};
  cfg.generator = small_config(2);
  cfg.n_replicates = 6;
  cfg.events_per_replicate = 100;
  const auto a = bootstrap_generate(data, point, cfg, 12);
  cfg.jobs = 4;
  const auto b = bootstrap_generate(data, point, cfg, 12);
  ASSERT_EQ(a.size(), 6u);
  ASSERT_EQ(b.size(), 6u);
  for (std::size_t r = 0; r < a.size(); ++r) {
    EXPECT_EQ(a[r].replicate_id, static_cast<Index>(r));
    EXPECT_EQ(a[r].m, 2);
    EXPECT_TRUE(bit_equal(a[r].events, b[r].events));
  }
  EXPECT_FALSE(bit_equal(a[0].events, a[1].events));
  cfg.n_replicates = 0;
  EXPECT_THROW(bootstrap_generate(data, point, cfg, 12), Error);
}
