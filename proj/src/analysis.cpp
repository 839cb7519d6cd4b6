#include "xcb/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace xcb {

FeatureMatrix::FeatureMatrix(std::size_t rows, std::vector<std::string> columns)
    : rows_(rows), columns_(std::move(columns)), data_(rows * columns_.size(), 0.0), labels_(rows) {}

std::vector<double> FeatureMatrix::column(std::size_t c) const {
  if (c >= cols()) throw AnalysisError("column index out of range");
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = at(r, c);
  return out;
}

std::size_t FeatureMatrix::column_index(std::string_view name) const {
  const auto it = std::find(columns_.begin(), columns_.end(), name);
  if (it == columns_.end()) throw AnalysisError("no column named " + std::string(name));
  return static_cast<std::size_t>(it - columns_.begin());
}

void FeatureMatrix::push_row(std::span<const double> values, std::string label) {
  if (values.size() != cols()) throw AnalysisError("row width does not match column count");
  data_.insert(data_.end(), values.begin(), values.end());
  labels_.push_back(std::move(label));
  ++rows_;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> indices) const {
  FeatureMatrix out(0, columns_);
  out.data_.reserve(indices.size() * cols());
  out.labels_.reserve(indices.size());
  for (const std::size_t i : indices) {
    if (i >= rows_) throw AnalysisError("row index out of range");
    out.push_row(row(i), labels_[i]);
  }
  return out;
}

void FeatureMatrix::validate() const {
  if (labels_.size() != rows_) throw AnalysisError("label count does not match row count");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw AnalysisError("non-finite value in row " + std::to_string(i / cols()) + ", column " +
                          columns_[i % cols()]);
    }
  }
}

FeatureMatrix build_matrix(const Dataset& dataset, const MatrixOptions& options) {
  const FeatureSchema& schema =
      options.aggregate_storage ? FeatureSchema::aggregated() : FeatureSchema::standard();
  const std::size_t first =
      options.include_temperature ? FeatureSchema::kTemperature : FeatureSchema::kFirstPerformance;
  const std::size_t last = schema.value_count();

  std::vector<std::string> names;
  for (std::size_t c = first; c < last; ++c) names.push_back(schema.name(c));
  FeatureMatrix m(0, std::move(names));

  for (const DeviceData& device : dataset.devices) {
    const std::string& label =
        options.label == LabelKind::model ? device.record.model : device.record.mac;
    for (const SampleVector& s : device.samples) {
      if (options.aggregate_storage) {
        const SampleVector agg = aggregate_storage_features(s);
        m.push_row(std::span<const double>(agg.values).subspan(first, last - first), label);
      } else {
        if (s.values.size() != last) throw AnalysisError("sample width does not match the schema");
        m.push_row(std::span<const double>(s.values).subspan(first, last - first), label);
      }
    }
  }
  if (m.rows() == 0) throw AnalysisError("dataset has no samples");
  return m;
}

std::pair<FeatureMatrix, NormalizationParams> minmax_fit_transform(const FeatureMatrix& m) {
  if (m.rows() == 0) throw AnalysisError("cannot normalise an empty matrix");
  NormalizationParams p;
  p.x_min.assign(m.cols(), std::numeric_limits<double>::infinity());
  p.x_max.assign(m.cols(), -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      p.x_min[c] = std::min(p.x_min[c], m.at(r, c));
      p.x_max[c] = std::max(p.x_max[c], m.at(r, c));
    }
  }
  FeatureMatrix out = minmax_transform(m, p);
  return {std::move(out), std::move(p)};
}

void minmax_transform_row(std::span<double> row, const NormalizationParams& params) {
  if (row.size() != params.x_min.size()) throw AnalysisError("row width does not match normaliser");
  for (std::size_t c = 0; c < row.size(); ++c) {
    const double span = params.x_max[c] - params.x_min[c];
    row[c] = span > 0.0 ? (row[c] - params.x_min[c]) / span : 0.0;
  }
}

FeatureMatrix minmax_transform(const FeatureMatrix& m, const NormalizationParams& params) {
  FeatureMatrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) minmax_transform_row(out.row(r), params);
  return out;
}

SymmetricEigen symmetric_eigen(std::vector<double> a, std::size_t n, double tolerance,
                               int max_sweeps) {
  if (a.size() != n * n) throw AnalysisError("matrix is not n x n");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double x = a[i * n + j], y = a[j * n + i];
      if (std::abs(x - y) > 1e-9 * std::max({1.0, std::abs(x), std::abs(y)})) {
        throw AnalysisError("matrix is not symmetric");
      }
    }
  }

  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  double norm = 0.0;
  for (const double x : a) norm += x * x;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off == 0.0 || off <= tolerance * tolerance * norm) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        const double app = a[p * n + p], aqq = a[q * n + q];
        const double g = 100.0 * std::abs(apq);
        if (apq == 0.0) continue;
        if (sweep > 3 && std::abs(app) + g == std::abs(app) && std::abs(aqq) + g == std::abs(aqq)) {
          a[p * n + q] = a[q * n + p] = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        a[p * n + q] = a[q * n + p] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a[i * n + i] > a[j * n + j]; });

  SymmetricEigen out;
  out.values.reserve(n);
  out.vectors.reserve(n);
  for (const std::size_t i : order) {
    out.values.push_back(a[i * n + i]);
    std::vector<double> vec(n);
    for (std::size_t k = 0; k < n; ++k) vec[k] = v[k * n + i];
    out.vectors.push_back(std::move(vec));
  }
  return out;
}

PcaResult pca(const FeatureMatrix& m, std::size_t out_dims) {
  const std::size_t n = m.rows(), p = m.cols();
  if (n < 2) throw AnalysisError("pca needs at least two rows");
  if (out_dims == 0 || out_dims > p) throw AnalysisError("pca output dimension out of range");
  m.validate();

  PcaResult res;
  res.mean.assign(p, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < p; ++c) res.mean[c] += m.at(r, c);
  for (double& x : res.mean) x /= static_cast<double>(n);

  std::vector<double> cov(p * p, 0.0);
  std::vector<double> centred(p);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < p; ++c) centred[c] = m.at(r, c) - res.mean[c];
    for (std::size_t i = 0; i < p; ++i) {
      const double xi = centred[i];
      if (xi == 0.0) continue;
      double* row = &cov[i * p];
      for (std::size_t j = i; j < p; ++j) row[j] += xi * centred[j];
    }
  }
  const double denom = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i; j < p; ++j) {
      cov[i * p + j] /= denom;
      cov[j * p + i] = cov[i * p + j];
    }
  }

  SymmetricEigen eig = symmetric_eigen(std::move(cov), p);
  res.eigenvalues = eig.values;
  double total = 0.0;
  for (const double l : eig.values) total += std::max(l, 0.0);
  res.explained_variance_ratio.reserve(p);
  for (const double l : eig.values)
    res.explained_variance_ratio.push_back(total > 0.0 ? std::max(l, 0.0) / total : 0.0);

  for (std::size_t d = 0; d < out_dims; ++d) {
    std::vector<double> axis = std::move(eig.vectors[d]);
    std::size_t big = 0;
    for (std::size_t k = 1; k < p; ++k)
      if (std::abs(axis[k]) > std::abs(axis[big])) big = k;
    if (axis[big] < 0.0)
      for (double& x : axis) x = -x;
    res.axes.push_back(std::move(axis));
  }

  std::vector<std::string> names;
  for (std::size_t d = 0; d < out_dims; ++d) names.push_back("pc" + std::to_string(d + 1));
  res.projected = FeatureMatrix(n, std::move(names));
  res.projected.labels() = m.labels();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t d = 0; d < out_dims; ++d) {
      double acc = 0.0;
      for (std::size_t c = 0; c < p; ++c) acc += (m.at(r, c) - res.mean[c]) * res.axes[d][c];
      res.projected.at(r, d) = acc;
    }
  }
  return res;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

// Points in canonical order, flattened.
struct PointSet {
  std::size_t n = 0, d = 0;
  std::vector<double> x;
  std::span<const double> at(std::size_t i) const { return {x.data() + i * d, d}; }
};

ClusterResult lloyd_once(const PointSet& pts, std::size_t k, std::mt19937_64& rng,
                         std::size_t max_iter) {
  const std::size_t n = pts.n, d = pts.d;
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);

  std::vector<bool> chosen(n, false);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  chosen[first] = true;
  centroids.emplace_back(pts.at(first).begin(), pts.at(first).end());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(pts.at(i), centroids[0]);
  while (centroids.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t next = n;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      const double target = u(rng);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        next = i;
        if (acc >= target) break;
      }
    }
    if (next == n) {
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) { next = i; break; }
    }
    chosen[next] = true;
    centroids.emplace_back(pts.at(next).begin(), pts.at(next).end());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(pts.at(i), centroids.back()));
  }

  ClusterResult res;
  std::vector<std::size_t> assign(n, k);
  std::vector<double> dist(n, 0.0);
  bool reseeded = false;
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = sq_dist(pts.at(i), centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double dd = sq_dist(pts.at(i), centroids[c]);
        if (dd < best_d) { best_d = dd; best = c; }
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
      wcss += best_d;
    }
    res.wcss_history.push_back(wcss);
    res.iterations = iter + 1;
    if (!changed && !reseeded) break;

    std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      const auto p = pts.at(i);
      for (std::size_t j = 0; j < d; ++j) sums[assign[i]][j] += p[j];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c] > 0)
        for (std::size_t j = 0; j < d; ++j) centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);

    reseeded = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = n;
      double far_d = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assign[i]] < 2) continue;
        const double dd = sq_dist(pts.at(i), centroids[assign[i]]);
        if (dd > far_d) { far_d = dd; far = i; }
      }
      if (far == n) continue;
      --counts[assign[far]];
      assign[far] = c;
      counts[c] = 1;
      centroids[c].assign(pts.at(far).begin(), pts.at(far).end());
      reseeded = true;
    }
  }

  res.assignment = std::move(assign);
  res.centroids = std::move(centroids);
  res.sizes.assign(k, 0);
  for (const std::size_t a : res.assignment) ++res.sizes[a];
  return res;
}

}  // namespace

ClusterResult kmeans(const FeatureMatrix& points, std::size_t k, std::uint64_t seed,
                     std::size_t max_iter) {
  const std::size_t n = points.rows();
  if (k == 0) throw AnalysisError("k must be positive");
  if (k > n) throw AnalysisError("k exceeds the number of points");
  if (max_iter == 0) throw AnalysisError("max_iter must be positive");
  points.validate();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = points.row(a), rb = points.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  PointSet pts{n, points.cols(), {}};
  pts.x.reserve(n * pts.d);
  for (const std::size_t i : order) pts.x.insert(pts.x.end(), points.row(i).begin(), points.row(i).end());

  constexpr int kRestarts = 10;
  std::mt19937_64 rng(seed);
  ClusterResult best;
  for (int r = 0; r < kRestarts; ++r) {
    ClusterResult run = lloyd_once(pts, k, rng, max_iter);
    if (r == 0 || run.wcss() < best.wcss()) best = std::move(run);
  }

  std::vector<std::size_t> assignment(n);
  for (std::size_t i = 0; i < n; ++i) assignment[order[i]] = best.assignment[i];
  best.assignment = std::move(assignment);
  return best;
}

PurityResult cluster_purity(const ClusterResult& result, std::span<const std::string> labels) {
  if (labels.size() != result.assignment.size()) throw AnalysisError("label count does not match assignment");
  if (labels.empty()) throw AnalysisError("no points");
  const std::size_t k = result.sizes.size();
  std::vector<std::map<std::string, std::size_t>> tally(k);
  for (std::size_t i = 0; i < labels.size(); ++i) ++tally.at(result.assignment[i])[labels[i]];

  PurityResult out;
  out.majority_label.resize(k);
  out.majority_count.assign(k, 0);
  std::size_t total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (const auto& [label, count] : tally[c]) {
      if (count > out.majority_count[c]) {
        out.majority_count[c] = count;
        out.majority_label[c] = label;
      }
    }
    total += out.majority_count[c];
  }
  out.purity = static_cast<double>(total) / static_cast<double>(labels.size());
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw AnalysisError("pearson: length mismatch");
  if (x.size() < 2) throw AnalysisError("pearson: need at least two points");
  const auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v[0]; });
  };
  const bool cx = constant(x), cy = constant(y);
  if (cx && cy) throw AnalysisError("pearson: both inputs are constant");
  if (cx || cy) return 0.0;

  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

const FeatureCorrelation& CorrelationReport::operator[](std::string_view feature) const {
  for (const auto& f : features)
    if (f.feature == feature) return f;
  throw AnalysisError("feature not in report: " + std::string(feature));
}

CorrelationReport correlation_report(const FeatureMatrix& device_rows) {
  if (device_rows.rows() < kMinCorrelationRows)
    throw AnalysisError("correlation needs at least " + std::to_string(kMinCorrelationRows) + " rows");
  const std::size_t tc = device_rows.column_index("temperature");
  const std::vector<double> temp = device_rows.column(tc);
  if (std::all_of(temp.begin(), temp.end(), [&](double t) { return t == temp[0]; }))
    throw AnalysisError("temperature is constant");

  CorrelationReport report;
  report.features.push_back({"temperature", 1.0});
  for (std::size_t c = 0; c < device_rows.cols(); ++c) {
    if (c == tc) continue;
    const std::vector<double> col = device_rows.column(c);
    FeatureCorrelation fc{device_rows.columns()[c], std::nullopt};
    if (!std::all_of(col.begin(), col.end(), [&](double v) { return v == col[0]; }))
      fc.r = pearson(col, temp);
    report.features.push_back(std::move(fc));
  }
  return report;
}

DensitySummary density_summary(const Dataset& dataset, std::string_view feature,
                               std::string_view model, std::size_t bins) {
  if (bins == 0) throw AnalysisError("bin count must be positive");
  const auto std_idx = FeatureSchema::standard().find(feature);
  const auto agg_idx = FeatureSchema::aggregated().find(feature);
  const auto valid = [](std::optional<std::size_t> idx, const FeatureSchema& s) {
    return idx && *idx != FeatureSchema::kTimestamp && *idx < s.value_count();
  };
  const bool use_std = valid(std_idx, FeatureSchema::standard());
  if (!use_std && !valid(agg_idx, FeatureSchema::aggregated()))
    throw AnalysisError("unknown feature: " + std::string(feature));

  DensitySummary out;
  out.feature = std::string(feature);
  std::vector<std::vector<double>> values;
  for (const DeviceData& dev : dataset.devices) {
    if (!model.empty() && dev.record.model != model) continue;
    if (dev.samples.empty()) continue;
    std::vector<double> v;
    v.reserve(dev.samples.size());
    for (const SampleVector& s : dev.samples)
      v.push_back(use_std ? s.values.at(*std_idx) : aggregate_storage_features(s).values.at(*agg_idx));
    DeviceDensity dd;
    dd.mac = dev.record.mac;
    out.devices.push_back(std::move(dd));
    values.push_back(std::move(v));
  }
  if (values.empty()) throw AnalysisError("no devices match the selection");

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& v : values)
    for (const double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  const double width = (hi - lo) / static_cast<double>(bins);
  out.bin_edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) out.bin_edges[i] = lo + width * static_cast<double>(i);
  out.bin_edges[bins] = hi;

  for (std::size_t d = 0; d < values.size(); ++d) {
    DeviceDensity& dd = out.devices[d];
    const auto& v = values[d];
    dd.counts.assign(bins, 0);
    dd.n = v.size();
    for (const double x : v) {
      std::size_t b = 0;
      if (hi > lo) {
        const double pos = (x - lo) / (hi - lo) * static_cast<double>(bins);
        b = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, std::floor(pos))));
      }
      ++dd.counts[b];
    }
    dd.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (const double x : v) ss += (x - dd.mean) * (x - dd.mean);
    dd.sigma = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  }
  return out;
}

}  // namespace xcb
