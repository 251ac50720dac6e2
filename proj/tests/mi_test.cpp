#include "infoplane/mi.hpp"

#include "mi_oracle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numeric>

namespace infoplane {
namespace {

using testing::label_entropy;
using testing::naive_xz;
using testing::naive_zy;
using testing::random_matrix;
using testing::rel_error;

Matrix column(std::initializer_list<double> v) {
  Matrix m(Eigen::Index(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

std::vector<std::int32_t> cyclic_labels(Eigen::Index n, std::int32_t classes) {
  std::vector<std::int32_t> y;
  for (Eigen::Index i = 0; i < n; ++i) y.push_back(std::int32_t(i % classes));
  return y;
}

TEST(PairwiseDistances, MatchesDirectDifferencesAndZeroDiagonal) {
  Rng rng(4);
  const Matrix z = random_matrix(rng, 17, 6, 2.0);
  const Matrix d = pairwise_sq_distances(z);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    EXPECT_EQ(d(i, i), 0.0);
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
      EXPECT_NEAR(d(i, j), testing::naive_sq_dist(z, i, j), 1e-12);
      EXPECT_GE(d(i, j), 0.0);
    }
  }
}

TEST(PairwiseDistances, RejectsNonFinite) {
  Matrix z = Matrix::Zero(3, 2);
  z(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(pairwise_sq_distances(z), std::invalid_argument);
}

TEST(KernelLogsums, TwoScalarPoints) {
  const Vector l = kernel_logsums(column({0.0, 1.0}), 0.5, 2.0);
  const double k12 = std::exp(-1.0);
  EXPECT_NEAR(k12, 0.367879, 1e-6);
  EXPECT_NEAR(l(0), std::log((1.0 + k12) / 2.0), 1e-12);
  EXPECT_NEAR(l(0), -0.379885, 1e-6);
  EXPECT_NEAR(l(1), l(0), 1e-15);
}

TEST(KernelLogsums, IdenticalRowsGiveZero) {
  Matrix z = Matrix::Constant(5, 3, 1.25);
  EXPECT_TRUE(kernel_logsums(z, 0.1, 2.0).isZero(0.0));
}

TEST(KernelLogsums, FarApartRowsApproachLogInverseN) {
  const Vector l = kernel_logsums(column({0.0, 100.0, 200.0, 300.0}), 0.1, 2.0);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(l(i), std::log(0.25), 1e-12);
}

TEST(KernelLogsums, Preconditions) {
  EXPECT_THROW(kernel_logsums(column({1.0}), 0.1, 2.0), std::invalid_argument);
  EXPECT_THROW(kernel_logsums(column({0.0, 1.0}), 0.0, 2.0), std::invalid_argument);
}

TEST(MiXzBound, HandValues) {
  EXPECT_EQ(mi_xz_bound(Matrix::Ones(4, 2), 0.1, Bound::kUpper), 0.0);
  EXPECT_NEAR(mi_xz_bound(column({0, 1e3, 2e3, 3e3}), 0.1, Bound::kUpper), std::log(4.0), 1e-12);
  const Matrix z = column({0.0, 0.0, 10.0, 10.0});
  EXPECT_NEAR(mi_xz_bound(z, 0.5, Bound::kUpper), std::log(2.0), 1e-12);
  EXPECT_NEAR(mi_xz_bound(z, 0.5, Bound::kLower), std::log(2.0), 1e-10);
}

TEST(MiZyBound, HandValues) {
  const Matrix z = column({0.0, 0.0, 10.0, 10.0});
  EXPECT_NEAR(mi_zy_bound(z, {0, 0, 1, 1}, 0.5, Bound::kUpper), std::log(2.0), 1e-12);
  EXPECT_NEAR(mi_zy_bound(Matrix::Ones(4, 3), {0, 1, 2, 0}, 0.5, Bound::kUpper), 0.0, 1e-15);
  Rng rng(2);
  EXPECT_NEAR(mi_zy_bound(random_matrix(rng, 9, 3), std::vector<std::int32_t>(9, 0), 0.5, Bound::kUpper), 0.0,
              1e-14);
}

TEST(MiZyBound, SingletonClassContributesNothing) {
  Rng rng(8);
  const Matrix z = random_matrix(rng, 6, 2);
  const std::vector<std::int32_t> y = {0, 0, 0, 0, 0, 1};
  EXPECT_NEAR(mi_zy_bound(z, y, 0.3, Bound::kUpper), naive_zy(z, y, 0.3, 2.0), 1e-12);
}

TEST(MiZyBound, RejectsNegativeLabel) {
  EXPECT_THROW(mi_zy_bound(column({0, 1}), {0, -1}, 0.1, Bound::kUpper), std::invalid_argument);
}

TEST(MiOracle, OptimizedMatchesTwoLoopReference) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto n = Eigen::Index(2 + rng.below(120));
    const auto d = Eigen::Index(1 + rng.below(32));
    const Matrix z = random_matrix(rng, n, d, 0.3);
    const auto y = cyclic_labels(n, std::int32_t(1 + rng.below(5)));
    const double sigma2 = 0.05 + rng.uniform();
    const auto e = estimate_point(z, y, MiConfig{.sigma2 = sigma2});
    EXPECT_LT(rel_error(e.i_xz_upper, naive_xz(z, sigma2, 2.0)), 1e-10) << seed;
    EXPECT_LT(rel_error(e.i_xz_lower, naive_xz(z, sigma2, 8.0)), 1e-10) << seed;
    EXPECT_LT(rel_error(e.i_zy_upper, naive_zy(z, y, sigma2, 2.0)), 1e-10) << seed;
    EXPECT_LT(rel_error(e.i_zy_lower, naive_zy(z, y, sigma2, 8.0)), 1e-10) << seed;
  }
}

TEST(MiProperties, RangeOrderingAndCaps) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto n = Eigen::Index(2 + rng.below(40));
    const Matrix z = random_matrix(rng, n, Eigen::Index(1 + rng.below(8)), 0.5);
    const auto y = cyclic_labels(n, std::int32_t(1 + rng.below(4)));
    const auto e = estimate_point(z, y, MiConfig{.sigma2 = 0.1});
    EXPECT_GE(e.i_xz_lower, 0.0);
    EXPECT_LE(e.i_xz_upper, std::log(double(n)) + 1e-12);
    EXPECT_LE(e.i_xz_lower, e.i_xz_upper + 1e-12);
    EXPECT_LE(e.i_zy_upper, e.i_xz_upper + 1e-12);
    EXPECT_LE(e.i_zy_lower, e.i_xz_lower + 1e-12);
    EXPECT_LE(e.i_zy_upper, label_entropy(y) + 1e-9);
    EXPECT_LE(e.i_zy_lower, label_entropy(y) + 1e-9);
  }
}

TEST(MiProperties, NonIncreasingInBandwidth) {
  Rng rng(31);
  const Matrix z = random_matrix(rng, 30, 4);
  double prev = std::numeric_limits<double>::infinity();
  for (double s2 : {0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 50.0}) {
    const double v = mi_xz_bound(z, s2, Bound::kUpper);
    EXPECT_LE(v, prev + 1e-12);
    prev = v;
  }
}

TEST(MiProperties, TranslationAndPermutationInvariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 500);
    const Matrix z = random_matrix(rng, 25, 5, 0.4);
    const auto y = cyclic_labels(25, 3);
    const auto base = estimate_point(z, y, MiConfig{});

    Matrix shifted = z;
    shifted.rowwise() += (50.0 * random_matrix(rng, 1, 5)).row(0);
    const auto t = estimate_point(shifted, y, MiConfig{});
    EXPECT_NEAR(t.i_xz_upper, base.i_xz_upper, 1e-12);
    EXPECT_NEAR(t.i_zy_lower, base.i_zy_lower, 1e-12);

    std::vector<std::int64_t> perm(25);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    const auto p = estimate_point(select_rows(z, perm), select_labels(y, perm), MiConfig{});
    EXPECT_NEAR(p.i_xz_upper, base.i_xz_upper, 1e-12);
    EXPECT_NEAR(p.i_xz_lower, base.i_xz_lower, 1e-12);
    EXPECT_NEAR(p.i_zy_upper, base.i_zy_upper, 1e-12);
    EXPECT_NEAR(p.i_zy_lower, base.i_zy_lower, 1e-12);
  }
}

TEST(MiConfigSwitch, NonUniformLowerOnlyChangesZyLower) {
  Rng rng(12);
  const Matrix z = random_matrix(rng, 20, 3, 0.3);
  const auto y = cyclic_labels(20, 2);
  const auto a = estimate_point(z, y, MiConfig{});
  const auto b = estimate_point(z, y, MiConfig{.lower_bound_uniform = false});
  EXPECT_EQ(a.i_xz_upper, b.i_xz_upper);
  EXPECT_EQ(a.i_xz_lower, b.i_xz_lower);
  EXPECT_EQ(a.i_zy_upper, b.i_zy_upper);
  EXPECT_NE(a.i_zy_lower, b.i_zy_lower);
  EXPECT_NEAR(b.i_zy_lower, naive_xz(z, 0.1, 8.0) - (naive_xz(z, 0.1, 2.0) - naive_zy(z, y, 0.1, 2.0)), 1e-12);
}

TEST(MiConfig, RejectsBadValues) {
  EXPECT_THROW(validate_config(MiConfig{.sigma2 = 0.0}), std::invalid_argument);
  EXPECT_THROW(validate_config(MiConfig{.sigma2 = -1.0}), std::invalid_argument);
  EXPECT_THROW(validate_config(MiConfig{.max_rows = 1}), std::invalid_argument);
}

TEST(Subsample, IdentityWhenSmall) {
  const auto y = cyclic_labels(100, 3);
  const auto rows = subsample_indices(y, MiConfig{});
  ASSERT_EQ(rows.size(), 100u);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i], std::int64_t(i));
}

TEST(Subsample, StratifiedQuotas) {
  std::vector<std::int32_t> y(100, 0);
  for (int i = 90; i < 100; ++i) y[std::size_t(i)] = 1;
  const auto picked = select_labels(y, subsample_indices(y, MiConfig{.max_rows = 10}));
  ASSERT_EQ(picked.size(), 10u);
  EXPECT_EQ(std::count(picked.begin(), picked.end(), 0), 9);
  EXPECT_EQ(std::count(picked.begin(), picked.end(), 1), 1);
}

TEST(Subsample, RareClassesKeepOneRow) {
  std::vector<std::int32_t> y(200, 0);
  y[17] = 1;
  y[99] = 2;
  y[150] = 3;
  const auto rows = subsample_indices(y, MiConfig{.max_rows = 8});
  ASSERT_EQ(rows.size(), 8u);
  const auto picked = select_labels(y, rows);
  for (std::int32_t c = 1; c <= 3; ++c) EXPECT_EQ(std::count(picked.begin(), picked.end(), c), 1);
}

TEST(Subsample, SizeAndUniquenessProperty) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto n = Eigen::Index(20 + rng.below(300));
    std::vector<std::int32_t> y;
    for (Eigen::Index i = 0; i < n; ++i) y.push_back(std::int32_t(rng.below(1 + rng.below(6))));
    const auto max_rows = std::int64_t(2 + rng.below(std::uint64_t(n)));
    for (bool stratified : {true, false}) {
      const auto rows = subsample_indices(y, MiConfig{.max_rows = max_rows, .subsample_seed = seed, .stratified = stratified});
      const auto expected = std::min<std::int64_t>(n, max_rows);
      EXPECT_GE(std::int64_t(rows.size()), expected);
      EXPECT_TRUE(std::is_sorted(rows.begin(), rows.end()));
      EXPECT_EQ(std::adjacent_find(rows.begin(), rows.end()), rows.end());
      if (!stratified) {
        EXPECT_EQ(std::int64_t(rows.size()), expected);
      }
    }
  }
}

TEST(Subsample, DeterministicForSeed) {
  const auto y = cyclic_labels(500, 4);
  const MiConfig cfg{.max_rows = 37, .subsample_seed = 9};
  EXPECT_EQ(subsample_indices(y, cfg), subsample_indices(y, cfg));
  EXPECT_NE(subsample_indices(y, cfg), subsample_indices(y, MiConfig{.max_rows = 37, .subsample_seed = 10}));
}

ActivationTrace make_trace(std::uint64_t seed, std::uint32_t epochs, std::uint32_t n,
                           std::vector<std::uint32_t> dims) {
  TraceHeader h;
  h.dataset_name = "toy";
  for (std::size_t l = 0; l < dims.size(); ++l) h.layer_names.push_back("l" + std::to_string(l + 1));
  h.layer_dims = dims;
  h.num_classes = 3;
  h.num_nodes = n;
  h.activation_name = "relu";
  h.labels = cyclic_labels(n, 3);
  Rng rng(seed);
  TraceRecorder rec(h);
  for (std::uint32_t e = 0; e < epochs; ++e)
    for (std::uint16_t l = 0; l < dims.size(); ++l) rec.append_snapshot(e + 1, l, random_matrix(rng, n, dims[l], 0.3));
  return rec.finish();
}

TEST(Plane, OneEstimatePerChunkMatchingOracle) {
  const auto trace = make_trace(1, 2, 64, {5, 4, 3});
  const auto plane = plane_from_trace(trace, MiConfig{});
  ASSERT_EQ(plane.size(), 6u);
  for (std::size_t k = 0; k < plane.size(); ++k) {
    const auto& e = plane[k];
    EXPECT_EQ(e.epoch, trace.chunks[k].epoch);
    EXPECT_EQ(e.layer_index, trace.chunks[k].layer_index);
    EXPECT_EQ(e.n_used, 64);
    const Matrix z = trace.chunks[k].to_matrix();
    EXPECT_LT(rel_error(e.i_xz_upper, naive_xz(z, 0.1, 2.0)), 1e-10);
    EXPECT_LT(rel_error(e.i_zy_lower, naive_zy(z, trace.header.labels, 0.1, 8.0)), 1e-10);
  }
}

TEST(Plane, IdenticalLayersGiveEqualValues) {
  auto trace = make_trace(2, 1, 30, {4, 4});
  trace.chunks[1].values = trace.chunks[0].values;
  const auto plane = plane_from_trace(trace, MiConfig{});
  EXPECT_EQ(plane[0].i_xz_upper, plane[1].i_xz_upper);
  EXPECT_EQ(plane[0].i_zy_lower, plane[1].i_zy_lower);
}

TEST(Plane, StreamingAndThreadCountDoNotChangeResults) {
  const auto dir = testing::temp_dir("mi_plane");
  const auto trace = make_trace(3, 4, 50, {6, 3});
  write_trace(dir / "t.bin", trace);
  const MiConfig cfg{.max_rows = 20, .subsample_seed = 5};
  const auto a = plane_from_trace(trace, cfg, 1);
  EXPECT_EQ(plane_from_trace(trace, cfg, 4), a);
  EXPECT_EQ(plane_from_file(dir / "t.bin", cfg, 3), a);
  for (const auto& e : a) EXPECT_EQ(e.n_used, 20);
}

TEST(Plane, RejectsInvalidTrace) {
  auto trace = make_trace(3, 2, 10, {2, 2});
  trace.chunks.pop_back();
  EXPECT_THROW(plane_from_trace(trace, MiConfig{}), TraceError);
}

TEST(PlaneCsv, RoundTripsExactly) {
  const auto dir = testing::temp_dir("mi_csv");
  const auto plane = plane_from_trace(make_trace(4, 3, 20, {3, 2}), MiConfig{});
  write_plane_csv(dir / "p.csv", plane);
  EXPECT_EQ(read_plane_csv(dir / "p.csv"), plane);
  const auto text = testing::read_file(dir / "p.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), kPlaneCsvHeader);
  EXPECT_EQ(text.substr(text.find('\n') + 1, 4), "1,1,");
}

TEST(PlaneCsv, RejectsMalformedRows) {
  const auto dir = testing::temp_dir("mi_csv_bad");
  testing::write_file(dir / "p.csv", std::string(kPlaneCsvHeader) + "\n1,0,3,1,1,1,1\n");
  EXPECT_THROW(read_plane_csv(dir / "p.csv"), std::runtime_error);
  testing::write_file(dir / "q.csv", "epoch,layer\n");
  EXPECT_THROW(read_plane_csv(dir / "q.csv"), std::runtime_error);
}

}  // namespace
}  // namespace infoplane
