#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "test_util.hpp"
#include "xcb/analysis.hpp"
#include "xcb/simulator.hpp"

using namespace xcb;
using doctest::Approx;

namespace {

FeatureMatrix matrix(const std::vector<std::vector<double>>& rows, std::vector<std::string> labels = {}) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < rows.at(0).size(); ++c) names.push_back("f" + std::to_string(c));
  FeatureMatrix m(0, names);
  for (std::size_t r = 0; r < rows.size(); ++r) m.push_row(rows[r], labels.empty() ? "x" : labels[r]);
  return m;
}

FeatureMatrix random_matrix(std::mt19937_64& rng, std::size_t n, std::size_t p) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<std::vector<double>> rows(n, std::vector<double>(p));
  for (auto& row : rows) {
    const double common = z(rng);
    for (std::size_t c = 0; c < p; ++c) row[c] = z(rng) * double(c + 1) + common * (c % 2 ? 1.5 : -0.5);
  }
  return matrix(rows);
}

Eigen::MatrixXd to_eigen(const FeatureMatrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m.at(r, c);
  return e;
}

double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / double(b.size());
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / double(a.size() - 1);
}

// Four tight blobs at the corners of a 100 x 100 square.
FeatureMatrix blobs(std::mt19937_64& rng, std::size_t per_blob) {
  std::normal_distribution<double> z(0.0, 0.5);
  const double corners[4][2] = {{0, 0}, {100, 0}, {0, 100}, {100, 100}};
  FeatureMatrix m(0, {"x", "y"});
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t i = 0; i < per_blob; ++i) {
      const std::vector<double> row = {corners[b][0] + z(rng), corners[b][1] + z(rng)};
      m.push_row(row, "blob" + std::to_string(b));
    }
  return m;
}

double direct_wcss(const FeatureMatrix& m, const ClusterResult& r) {
  double s = 0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double d = m.at(i, c) - r.centroids[r.assignment[i]][c];
      s += d * d;
    }
  return s;
}

Dataset simulated(std::vector<sim::FarmEntry> models, std::size_t samples, std::uint64_t seed = 42) {
  sim::FarmConfig config;
  config.models = std::move(models);
  config.samples_per_device = samples;
  config.master_seed = seed;
  return sim::simulate_dataset(config);
}

}  // namespace

TEST_CASE("matrix presets have the documented widths") {
  const auto ds = simulated({{sim::rpi4_like(), 2}}, 3);
  const auto clustering = build_matrix(ds, MatrixOptions::clustering());
  CHECK(clustering.cols() == 215);
  CHECK(clustering.rows() == 6);
  CHECK(std::find(clustering.columns().begin(), clustering.columns().end(), "temperature") ==
        clustering.columns().end());
  CHECK(clustering.labels()[0] == "RPi4like");

  const auto ident = build_matrix(ds, MatrixOptions::identification());
  CHECK(ident.cols() == 24);
  CHECK(ident.columns()[0] == "temperature");
  CHECK(ident.labels()[0] == ds.devices[0].record.mac);
  CHECK(ident.column_index("storage_write_max") == 23);

  Dataset one;
  one.devices.push_back(ds.devices[0]);
  one.devices[0].samples.resize(1);
  const auto single = build_matrix(one, MatrixOptions::identification());
  CHECK(single.rows() == 1);
  CHECK(single.cols() == 24);

  CHECK_THROWS_AS(build_matrix(Dataset{}, MatrixOptions::clustering()), AnalysisError);
}

TEST_CASE("identification matrix aggregates storage per sample") {
  const auto ds = simulated({{sim::rpi1_like(), 1}}, 2);
  const auto m = build_matrix(ds, MatrixOptions::identification());
  const auto& schema = FeatureSchema::standard();
  const auto& s = ds.devices[0].samples[1];
  std::vector<double> reads;
  for (int i = 1; i <= 100; ++i) reads.push_back(s.values[schema.index_of("storage_read_" + std::to_string(i))]);
  CHECK(m.at(1, m.column_index("storage_read_min")) == *std::min_element(reads.begin(), reads.end()));
  CHECK(m.at(1, m.column_index("storage_read_max")) == *std::max_element(reads.begin(), reads.end()));
  CHECK(m.at(1, m.column_index("storage_read_avg")) ==
        Approx(std::accumulate(reads.begin(), reads.end(), 0.0) / 100).epsilon(1e-12));
  CHECK(m.at(1, 0) == s.temperature());
}

TEST_CASE("minmax examples") {
  const auto [out, params] = minmax_fit_transform(matrix({{2, 7}, {4, 7}, {6, 7}}));
  CHECK(out.column(0) == std::vector<double>{0, 0.5, 1});
  CHECK(out.column(1) == std::vector<double>{0, 0, 0});
  CHECK(params.x_min == std::vector<double>{2, 7});
  CHECK(params.x_max == std::vector<double>{6, 7});
}

TEST_CASE("minmax properties on random data") {
  std::mt19937_64 rng(1);
  const auto m = random_matrix(rng, 40, 6);
  const auto [out, params] = minmax_fit_transform(m);
  for (std::size_t c = 0; c < out.cols(); ++c) {
    CHECK(params.x_min[c] <= params.x_max[c]);
    const auto col = out.column(c);
    CHECK(*std::min_element(col.begin(), col.end()) == 0.0);
    CHECK(*std::max_element(col.begin(), col.end()) == 1.0);
  }
  const auto again = minmax_fit_transform(out).first;
  const auto replay = minmax_transform(m, params);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      CHECK(again.at(r, c) == Approx(out.at(r, c)).epsilon(1e-12));
      CHECK(replay.at(r, c) == out.at(r, c));
    }
  std::vector<double> row(m.row(3).begin(), m.row(3).end());
  minmax_transform_row(row, params);
  for (std::size_t c = 0; c < row.size(); ++c) CHECK(row[c] == out.at(3, c));
}

TEST_CASE("pca of collinear points has a single component") {
  const auto r = pca(matrix({{0, 0}, {1, 1}, {2, 2}, {3, 3}, {5, 5}}));
  CHECK(r.explained_variance_ratio[0] == Approx(1.0));
  CHECK(r.explained_variance_ratio[1] == Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(r.axes[0][0]) == Approx(std::sqrt(0.5)));
}

TEST_CASE("pca of square corners splits variance evenly") {
  const auto r = pca(matrix({{0, 0}, {1, 0}, {0, 1}, {1, 1}}));
  CHECK(r.explained_variance_ratio[0] == Approx(0.5));
  CHECK(r.explained_variance_ratio[1] == Approx(0.5));
}

TEST_CASE("pca matches an Eigen eigendecomposition up to axis sign") {
  std::mt19937_64 rng(50);
  const auto m = random_matrix(rng, 50, 5);
  const auto r = pca(m, 5);

  const Eigen::MatrixXd x = to_eigen(m);
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const Eigen::VectorXd values = solver.eigenvalues().reverse();
  const Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();
  const Eigen::MatrixXd oracle = centered * vectors;

  const double total = values.sum();
  for (int k = 0; k < 5; ++k) {
    CHECK(r.eigenvalues[k] == Approx(values(k)).epsilon(1e-9));
    CHECK(r.explained_variance_ratio[k] == Approx(values(k) / total).epsilon(1e-9));
    const double sign = oracle(0, k) * r.projected.at(0, k) < 0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      CHECK(r.projected.at(i, k) == Approx(sign * oracle(i, k)).epsilon(1e-8).scale(1.0));
    }
  }
}

TEST_CASE("pca invariants") {
  std::mt19937_64 rng(8);
  const auto m = minmax_fit_transform(random_matrix(rng, 60, 7)).first;
  const auto r = pca(m, 7);
  double ratio_sum = 0;
  for (std::size_t k = 0; k < 7; ++k) {
    ratio_sum += r.explained_variance_ratio[k];
    if (k > 0) CHECK(r.explained_variance_ratio[k] <= r.explained_variance_ratio[k - 1]);
    // Largest-magnitude loading is positive.
    const auto& axis = r.axes[k];
    const auto big = std::max_element(axis.begin(), axis.end(),
                                      [](double a, double b) { return std::abs(a) < std::abs(b); });
    CHECK(*big > 0);
  }
  CHECK(ratio_sum == Approx(1.0));

  // Uncorrelated projections.
  for (std::size_t a = 0; a < 7; ++a)
    for (std::size_t b = a + 1; b < 7; ++b) {
      const double cab = sample_cov(r.projected.column(a), r.projected.column(b));
      CHECK(std::abs(cab) <= 1e-8 * r.eigenvalues[0]);
    }

  // Full reconstruction.
  double err = 0, norm = 0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      double v = r.mean[c];
      for (std::size_t k = 0; k < 7; ++k) v += r.projected.at(i, k) * r.axes[k][c];
      err += (v - m.at(i, c)) * (v - m.at(i, c));
      norm += m.at(i, c) * m.at(i, c);
    }
  CHECK(std::sqrt(err / norm) <= 1e-8);
  CHECK(r.projected.labels() == m.labels());
}

TEST_CASE("pca on a constant matrix returns zero ratios") {
  const auto r = pca(matrix({{1, 2}, {1, 2}, {1, 2}}));
  CHECK(r.explained_variance_ratio[0] == 0.0);
  CHECK(r.axes.size() == 2);
  CHECK_THROWS_AS(pca(matrix({{1, 2}}), 2), AnalysisError);
}

TEST_CASE("symmetric eigen reconstructs the input") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  const std::size_t n = 9;
  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) a[i * n + j] = a[j * n + i] = z(rng);
  const auto e = symmetric_eigen(a, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double v = 0;
      for (std::size_t k = 0; k < n; ++k) v += e.values[k] * e.vectors[k][i] * e.vectors[k][j];
      CHECK(v == Approx(a[i * n + j]).epsilon(1e-10).scale(1.0));
    }
  CHECK(std::is_sorted(e.values.rbegin(), e.values.rend()));
}

TEST_CASE("k-means recovers four separated blobs") {
  std::mt19937_64 rng(2);
  const auto m = blobs(rng, 25);
  const auto r = kmeans(m, 4, 7);
  CHECK(r.sizes == std::vector<std::size_t>{25, 25, 25, 25});
  const auto p = cluster_purity(r, m.labels());
  CHECK(p.purity == 1.0);
  std::size_t total = 0;
  for (auto s : r.sizes) total += s;
  CHECK(total == m.rows());
}

TEST_CASE("k-means edge cases") {
  std::mt19937_64 rng(3);
  const auto m = random_matrix(rng, 12, 2);
  SUBCASE("k = 1 gives the global mean") {
    const auto r = kmeans(m, 1, 0);
    for (std::size_t c = 0; c < 2; ++c) {
      const auto col = m.column(c);
      CHECK(r.centroids[0][c] == Approx(std::accumulate(col.begin(), col.end(), 0.0) / 12));
    }
  }
  SUBCASE("k = n puts every point in its own cluster") {
    const auto r = kmeans(m, 12, 0);
    CHECK(r.wcss() == Approx(0.0));
    for (auto s : r.sizes) CHECK(s == 1);
  }
  SUBCASE("k > n is rejected") { CHECK_THROWS_AS(kmeans(m, 13, 0), AnalysisError); }
  SUBCASE("duplicated points with k above the distinct count keep sizes consistent") {
    const auto dup = matrix({{1, 1}, {1, 1}, {1, 1}, {5, 5}, {5, 5}});
    const auto r = kmeans(dup, 3, 1);
    CHECK(std::accumulate(r.sizes.begin(), r.sizes.end(), std::size_t{0}) == 5);
  }
}

TEST_CASE("k-means WCSS never increases and matches a direct computation") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = random_matrix(rng, 80, 2);
    const auto r = kmeans(m, 5, trial);
    for (std::size_t i = 1; i < r.wcss_history.size(); ++i)
      CHECK(r.wcss_history[i] <= r.wcss_history[i - 1] * (1 + 1e-12));
    CHECK(r.wcss() == Approx(direct_wcss(m, r)).epsilon(1e-9));
    CHECK(r.iterations <= 300);
  }
}

TEST_CASE("k-means is invariant under row permutation") {
  std::mt19937_64 rng(5);
  const auto m = random_matrix(rng, 60, 2);
  std::vector<std::size_t> order(m.rows());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto shuffled = m.select_rows(order);
  const auto a = kmeans(m, 4, 9);
  const auto b = kmeans(shuffled, 4, 9);
  CHECK(a.wcss() == Approx(b.wcss()).epsilon(1e-12));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto ca = a.centroids[a.assignment[order[i]]];
    const auto cb = b.centroids[b.assignment[i]];
    CHECK(ca[0] == Approx(cb[0]).epsilon(1e-12));
    CHECK(ca[1] == Approx(cb[1]).epsilon(1e-12));
  }
}

TEST_CASE("cluster purity") {
  ClusterResult one;
  one.assignment = {0, 0, 0, 0};
  one.sizes = {4};
  const std::vector<std::string> labels = {"a", "b", "a", "b"};
  CHECK(cluster_purity(one, labels).purity == 0.5);

  ClusterResult two;
  two.assignment = {0, 1, 0, 1};
  two.sizes = {2, 2};
  const auto p = cluster_purity(two, labels);
  CHECK(p.purity == 1.0);
  CHECK(p.majority_label == std::vector<std::string>{"a", "b"});
  CHECK(p.majority_count == std::vector<std::size_t>{2, 2});
}

TEST_CASE("pearson examples") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  std::vector<double> y;
  for (double v : x) y.push_back(2 * v + 1);
  CHECK(pearson(x, y) == Approx(1.0));
  std::vector<double> neg;
  for (double v : x) neg.push_back(-v);
  CHECK(pearson(x, neg) == Approx(-1.0));
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 1, 2}) == Approx(-0.5));
  CHECK(pearson(x, std::vector<double>{4, 4, 4, 4, 4}) == 0.0);
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 1}, std::vector<double>{2, 2}), AnalysisError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{2}), AnalysisError);
  CHECK_THROWS_AS(pearson(x, std::vector<double>{1, 2}), AnalysisError);
}

TEST_CASE("pearson is symmetric and affine-invariant up to sign") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(30), y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      x[i] = z(rng);
      y[i] = 0.3 * x[i] + z(rng);
    }
    const double r = pearson(x, y);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    CHECK(pearson(y, x) == Approx(r).epsilon(1e-12));
    const double a = trial % 2 ? 3.5 : -0.25;
    std::vector<double> ax;
    for (double v : x) ax.push_back(a * v + 7.0);
    CHECK(pearson(ax, y) == Approx((a > 0 ? 1 : -1) * r).epsilon(1e-9));
  }
}

TEST_CASE("correlation report requires 30 rows and handles constant features") {
  FeatureMatrix m(0, {"temperature", "a", "flat"});
  for (int i = 0; i < 29; ++i) {
    const std::vector<double> row = {40.0 + i, 2.0 * i, 3.0};
    m.push_row(row, "dev");
  }
  CHECK_THROWS_AS(correlation_report(m), AnalysisError);
  const std::vector<double> last = {69.0, 58.0, 3.0};
  m.push_row(last, "dev");
  const auto rep = correlation_report(m);
  CHECK(rep["temperature"].r.value() == Approx(1.0));
  CHECK(rep["a"].r.value() == Approx(1.0));
  CHECK_FALSE(rep["flat"].r.has_value());
  CHECK(rep.features.front().feature == "temperature");
  CHECK_THROWS(rep["missing"]);
  CHECK_THROWS_AS(correlation_report(FeatureMatrix(0, {"a", "b"})), AnalysisError);
}

TEST_CASE("temperature correlation on simulated devices") {
  const MatrixOptions raw{LabelKind::mac, true, false};
  SUBCASE("RPi3-like: strong on non-sleep features, none on sleeps") {
    const auto m = build_matrix(simulated({{sim::rpi3_like(), 1}}, 2000), raw);
    const auto rep = correlation_report(m);
    for (const auto& f : rep.features) {
      REQUIRE(f.r.has_value());
      if (f.feature.rfind("cpu_sleep", 0) == 0) {
        CHECK(std::abs(*f.r) <= 0.1);
      } else {
        CHECK(std::abs(*f.r) >= 0.5);
      }
    }
  }
  SUBCASE("low-sensitivity model: every feature below 0.1") {
    const auto m = build_matrix(simulated({{sim::rpi4_like(), 1}}, 5000), raw);
    const auto rep = correlation_report(m);
    for (const auto& f : rep.features) {
      if (f.feature == "temperature") continue;
      CHECK(std::abs(*f.r) <= 0.1);
    }
  }
}

TEST_CASE("density of two devices with opposite skews does not overlap") {
  auto model = sim::rpi4_like();
  model.offset_sigma = 0;
  model.jitter_sigma = 1e-6;
  model.temp_coeff_sleep = 0;
  auto a = sim::ideal_device(model, "dc:a6:32:00:00:0a", 1);
  auto b = sim::ideal_device(model, "dc:a6:32:00:00:0b", 2);
  a.gpu_skew_ppm = 100;
  b.gpu_skew_ppm = -100;
  const auto ds = sim::simulate_dataset({a, b}, 200);
  const auto d = density_summary(ds, "cpu_sleep_120s");
  REQUIRE(d.devices.size() == 2);
  CHECK(d.bin_edges.size() == 101);
  for (std::size_t bin = 0; bin < 100; ++bin) CHECK((d.devices[0].counts[bin] == 0 || d.devices[1].counts[bin] == 0));

  // Closed-form means separated by far more than 4 sigma.
  const double ma = 6e10 * (1 + 100e-6), mb = 6e10 * (1 - 100e-6);
  const double sigma = 6e10 * 1e-6;
  CHECK(ma - mb > 8 * sigma);
  CHECK(d.devices[0].mean == Approx(ma).epsilon(4 * 1e-6 / std::sqrt(200.0)));
  CHECK(d.devices[1].mean == Approx(mb).epsilon(4 * 1e-6 / std::sqrt(200.0)));
}

TEST_CASE("density conservation, constant feature and selection") {
  const auto ds = simulated({{sim::rpi4_like(), 2}, {sim::rpi1_like(), 1}}, 15);
  const auto d = density_summary(ds, "gpu_scopy");
  REQUIRE(d.devices.size() == 3);
  for (const auto& dev : d.devices) {
    CHECK(std::accumulate(dev.counts.begin(), dev.counts.end(), std::size_t{0}) == 15);
    CHECK(dev.n == 15);
    CHECK(dev.sigma > 0);
  }
  CHECK(density_summary(ds, "gpu_scopy", "RPi1like").devices.size() == 1);
  CHECK_THROWS_AS(density_summary(ds, "gpu_scopy", "RPi9like"), AnalysisError);
  CHECK_THROWS(density_summary(ds, "not_a_feature"));

  Dataset flat = ds;
  flat.devices.resize(1);
  const auto col = FeatureSchema::standard().index_of("cpu_fib");
  for (auto& s : flat.devices[0].samples) s.values[col] = 1234;
  const auto c = density_summary(flat, "cpu_fib");
  std::size_t occupied = 0;
  for (auto n : c.devices[0].counts) occupied += n > 0;
  CHECK(occupied == 1);
  CHECK(c.devices[0].sigma == 0.0);
}

TEST_CASE("clustering separates the default fleet by model") {
  const auto ds = sim::simulate_dataset([] {
    auto c = sim::FarmConfig::default_fleet();
    c.samples_per_device = 20;
    return c;
  }());
  const auto m = minmax_fit_transform(build_matrix(ds, MatrixOptions::clustering())).first;
  const auto projected = pca(m).projected;
  const auto r = kmeans(projected, 4, 0);
  CHECK(cluster_purity(r, projected.labels()).purity == 1.0);
  std::multiset<std::size_t> sizes(r.sizes.begin(), r.sizes.end());
  CHECK(sizes == std::multiset<std::size_t>{200, 200, 200, 300});
}

TEST_CASE("feature matrix bookkeeping") {
  auto m = matrix({{1, 2}, {3, 4}, {5, 6}}, {"a", "b", "c"});
  const std::vector<std::size_t> pick = {2, 0};
  const auto s = m.select_rows(pick);
  CHECK(s.labels() == std::vector<std::string>{"c", "a"});
  CHECK(s.at(0, 1) == 6);
  CHECK_THROWS_AS(m.push_row(std::vector<double>{1}, "d"), AnalysisError);
  CHECK_THROWS(m.column_index("nope"));
  m.at(1, 1) = std::nan("");
  CHECK_THROWS_AS(m.validate(), AnalysisError);
}
