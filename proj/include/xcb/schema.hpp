#pragma once

// Dataset schema and the per-device CSV layout.
//
// A dataset directory holds one `<MAC>.csv` per device plus `MAC-Model.txt`
// mapping each MAC to its hardware model. Every CSV row has 218 columns:
// timestamp, temperature, 215 performance features and the MAC label last.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace xcb {

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  IoError(const std::string& what, std::vector<std::filesystem::path> written = {})
      : std::runtime_error(what), written_(std::move(written)) {}
  /// Files completed before the failure.
  const std::vector<std::filesystem::path>& written() const noexcept { return written_; }

 private:
  std::vector<std::filesystem::path> written_;
};

/// Ordered column names. The label column is always last.
class FeatureSchema {
 public:
  static constexpr std::size_t kColumnCount = 218;
  static constexpr std::size_t kPerformanceCount = 215;
  static constexpr std::size_t kTimestamp = 0;
  static constexpr std::size_t kTemperature = 1;
  static constexpr std::size_t kFirstPerformance = 2;

  explicit FeatureSchema(std::vector<std::string> columns);

  /// The full 218-column layout.
  static const FeatureSchema& standard();
  /// The 26-column layout with storage reads/writes reduced to avg/median/min/max.
  static const FeatureSchema& aggregated();

  std::span<const std::string> columns() const noexcept { return columns_; }
  std::size_t size() const noexcept { return columns_.size(); }
  /// Number of numeric columns (everything except the label).
  std::size_t value_count() const noexcept { return columns_.size() - 1; }
  const std::string& name(std::size_t i) const { return columns_.at(i); }

  std::optional<std::size_t> find(std::string_view name) const;
  /// Throws SchemaError for unknown names.
  std::size_t index_of(std::string_view name) const;

  bool operator==(const FeatureSchema&) const = default;

 private:
  std::vector<std::string> columns_;
};

/// Names of the 215 performance columns in schema order.
std::span<const std::string> performance_columns();

bool is_valid_mac(std::string_view mac);

/// One dataset row. `values` holds every non-label column in schema order.
struct SampleVector {
  std::vector<double> values;
  std::string label;

  double timestamp() const { return values.at(FeatureSchema::kTimestamp); }
  double temperature() const { return values.at(FeatureSchema::kTemperature); }
  std::span<const double> performance() const {
    return std::span<const double>(values).subspan(FeatureSchema::kFirstPerformance);
  }

  bool operator==(const SampleVector&) const = default;
};

struct DeviceRecord {
  std::string mac;
  std::string model;

  bool operator==(const DeviceRecord&) const = default;
};

struct DeviceData {
  DeviceRecord record;
  std::vector<SampleVector> samples;

  bool operator==(const DeviceData&) const = default;
};

struct Dataset {
  std::vector<DeviceData> devices;

  std::size_t sample_count() const noexcept;
  const DeviceData* find(std::string_view mac) const noexcept;

  bool operator==(const Dataset&) const = default;
};

/// Checks a row against the standard schema: width, positivity and finiteness
/// of performance values. Throws SchemaError with `where` as location prefix.
void validate_sample(const SampleVector& sample, std::string_view where = "sample");

/// Shortest decimal text that parses back to exactly `value`. Integral values
/// below 2^53 are printed without exponent.
std::string format_number(double value);

/// One CSV line (without trailing newline) for `sample`.
std::string format_row(const SampleVector& sample);
std::string format_header(const FeatureSchema& schema = FeatureSchema::standard());

/// Parses one CSV line of the standard schema. `where` prefixes error messages.
SampleVector parse_row(std::string_view line, std::string_view where);

/// Writes `<MAC>.csv` per device and MAC-Model.txt. Duplicate MACs are
/// rejected before anything is written.
void write_dataset(const Dataset& dataset, const std::filesystem::path& directory);

/// Reads a directory produced by write_dataset (or a headerless equivalent).
Dataset read_dataset(const std::filesystem::path& directory);

/// Reads just MAC-Model.txt.
std::vector<DeviceRecord> read_device_models(const std::filesystem::path& directory);
void write_device_models(const std::vector<DeviceRecord>& devices,
                         const std::filesystem::path& directory);

/// Reads one device CSV, validating each row's label against `mac`.
std::vector<SampleVector> read_device_csv(const std::filesystem::path& file, std::string_view mac);

/// Replaces the 100 read and 100 write columns with avg/median/min/max of each.
/// The result follows FeatureSchema::aggregated().
SampleVector aggregate_storage_features(const SampleVector& sample);

/// Median with the even-length convention (mean of the two central values).
double median(std::vector<double> values);

}  // namespace xcb
