#pragma once

// Offline analyses over collected or simulated datasets: normalisation,
// PCA + k-means model clustering, temperature correlation and per-device
// feature densities. Classifiers live in classify.hpp.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xcb/schema.hpp"

namespace xcb {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix with named columns and one label per row.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::vector<std::string> columns);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return columns_.size(); }
  const std::vector<std::string>& columns() const noexcept { return columns_; }
  std::vector<std::string>& labels() noexcept { return labels_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  std::vector<double> column(std::size_t c) const;
  std::size_t column_index(std::string_view name) const;

  /// Appends a row; `values.size()` must equal cols().
  void push_row(std::span<const double> values, std::string label);
  /// Rows at `indices`, in that order.
  FeatureMatrix select_rows(std::span<const std::size_t> indices) const;

  /// Throws AnalysisError when any value is non-finite or labels are missing.
  void validate() const;

 private:
  std::size_t rows_ = 0;
  std::vector<std::string> columns_;
  std::vector<double> data_;
  std::vector<std::string> labels_;
};

enum class LabelKind { model, mac };

struct MatrixOptions {
  LabelKind label = LabelKind::model;
  bool include_temperature = false;
  bool aggregate_storage = false;

  /// Model labels, raw storage columns, no temperature: 215 features.
  static MatrixOptions clustering() { return {LabelKind::model, false, false}; }
  /// MAC labels, temperature plus aggregated storage: 24 features.
  static MatrixOptions identification() { return {LabelKind::mac, true, true}; }
};

/// Timestamps are always dropped. Temperature, when included, is column 0.
FeatureMatrix build_matrix(const Dataset& dataset, const MatrixOptions& options);

struct NormalizationParams {
  std::vector<double> x_min;
  std::vector<double> x_max;
};

/// x' = (x - x_min) / (x_max - x_min) per column; constant columns map to 0.
std::pair<FeatureMatrix, NormalizationParams> minmax_fit_transform(const FeatureMatrix& m);
FeatureMatrix minmax_transform(const FeatureMatrix& m, const NormalizationParams& params);
void minmax_transform_row(std::span<double> row, const NormalizationParams& params);

/// Eigen-decomposition of a symmetric matrix (row-major, n x n) by cyclic
/// Jacobi rotations. Eigenvalues descend; eigenvectors are the rows of
/// `vectors`.
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
};
SymmetricEigen symmetric_eigen(std::vector<double> a, std::size_t n, double tolerance = 1e-14,
                               int max_sweeps = 100);

struct PcaResult {
  FeatureMatrix projected;                    // n x out_dims, labels carried over
  std::vector<double> mean;                   // per input column
  std::vector<std::vector<double>> axes;      // out_dims unit vectors
  std::vector<double> eigenvalues;            // all, descending
  std::vector<double> explained_variance_ratio;  // all, sums to 1 unless total variance is 0
};

/// Projects onto the top `out_dims` principal axes of the sample covariance.
/// Each axis is signed so that its largest-magnitude loading is positive.
PcaResult pca(const FeatureMatrix& m, std::size_t out_dims = 2);

struct ClusterResult {
  std::vector<std::size_t> assignment;
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> sizes;
  /// Within-cluster sum of squares after each assignment step.
  std::vector<double> wcss_history;
  std::size_t iterations = 0;

  double wcss() const { return wcss_history.empty() ? 0.0 : wcss_history.back(); }
};

/// Lloyd iterations from k-means++ seeding, best of ten seedings. Seeding walks the points in
/// lexicographic value order, so the result does not depend on row order.
ClusterResult kmeans(const FeatureMatrix& points, std::size_t k, std::uint64_t seed,
                     std::size_t max_iter = 300);

struct PurityResult {
  double purity = 0.0;
  std::vector<std::string> majority_label;  // per cluster ("" for empty clusters)
  std::vector<std::size_t> majority_count;  // per cluster
};

PurityResult cluster_purity(const ClusterResult& result, std::span<const std::string> labels);

/// Product-moment correlation. Throws AnalysisError for length mismatch, fewer
/// than two points, or two constant inputs. One constant input gives 0.
double pearson(std::span<const double> x, std::span<const double> y);

struct FeatureCorrelation {
  std::string feature;
  std::optional<double> r;  // empty when the feature is constant
};

struct CorrelationReport {
  std::vector<FeatureCorrelation> features;  // starts with temperature itself
  const FeatureCorrelation& operator[](std::string_view feature) const;
};

inline constexpr std::size_t kMinCorrelationRows = 30;

/// Pearson coefficient of every column against the `temperature` column.
CorrelationReport correlation_report(const FeatureMatrix& device_rows);

struct DeviceDensity {
  std::string mac;
  std::vector<std::size_t> counts;
  std::size_t n = 0;
  double mean = 0.0;
  double sigma = 0.0;
};

struct DensitySummary {
  std::string feature;
  std::vector<double> bin_edges;  // bins + 1 shared edges
  std::vector<DeviceDensity> devices;
};

inline constexpr std::size_t kDensityBins = 100;

/// Histograms of `feature` per device on shared bins spanning the pooled
/// values. An empty `model` selects every device.
DensitySummary density_summary(const Dataset& dataset, std::string_view feature,
                               std::string_view model = {}, std::size_t bins = kDensityBins);

}  // namespace xcb
