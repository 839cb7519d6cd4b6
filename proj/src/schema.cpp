#include "xcb/schema.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace xcb {
namespace fs = std::filesystem;

namespace {

std::vector<std::string> build_standard_columns() {
  std::vector<std::string> cols = {"timestamp", "temperature"};
  for (const char* d : {"1s", "2s", "5s", "10s", "120s"}) cols.push_back(std::string("cpu_sleep_") + d);
  for (const char* n : {"cpu_string_hash", "cpu_pseudo_random", "cpu_urandom", "cpu_fib",
                        "gpu_matrixmul", "gpu_matrixsum", "gpu_scopy", "mem_list_creation",
                        "mem_reserve", "mem_csv_read"}) {
    cols.emplace_back(n);
  }
  for (int i = 1; i <= 100; ++i) cols.push_back("storage_read_" + std::to_string(i));
  for (int i = 1; i <= 100; ++i) cols.push_back("storage_write_" + std::to_string(i));
  cols.emplace_back("mac");
  return cols;
}

std::vector<std::string> build_aggregated_columns() {
  const auto& full = FeatureSchema::standard();
  std::vector<std::string> cols(full.columns().begin(), full.columns().begin() + 17);
  for (const char* dir : {"read", "write"}) {
    for (const char* stat : {"avg", "median", "min", "max"}) {
      cols.push_back(std::string("storage_") + dir + "_" + stat);
    }
  }
  cols.emplace_back("mac");
  return cols;
}

constexpr std::size_t kFirstStorageRead = 17;
constexpr std::size_t kFirstStorageWrite = 117;
constexpr std::size_t kStorageOps = 100;

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  cells.reserve(FeatureSchema::kColumnCount);
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

FeatureSchema::FeatureSchema(std::vector<std::string> columns) : columns_(std::move(columns)) {
  if (columns_.empty()) throw SchemaError("schema needs at least a label column");
  std::set<std::string_view> seen;
  for (const auto& c : columns_) {
    if (!seen.insert(c).second) throw SchemaError("duplicate column name: " + c);
  }
}

const FeatureSchema& FeatureSchema::standard() {
  static const FeatureSchema schema(build_standard_columns());
  return schema;
}

const FeatureSchema& FeatureSchema::aggregated() {
  static const FeatureSchema schema(build_aggregated_columns());
  return schema;
}

std::optional<std::size_t> FeatureSchema::find(std::string_view name) const {
  const auto it = std::find(columns_.begin(), columns_.end(), name);
  if (it == columns_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - columns_.begin());
}

std::size_t FeatureSchema::index_of(std::string_view name) const {
  if (auto idx = find(name)) return *idx;
  throw SchemaError("unknown feature: " + std::string(name));
}

std::span<const std::string> performance_columns() {
  return FeatureSchema::standard().columns().subspan(FeatureSchema::kFirstPerformance,
                                                     FeatureSchema::kPerformanceCount);
}

bool is_valid_mac(std::string_view mac) {
  if (mac.size() != 17) return false;
  for (std::size_t i = 0; i < mac.size(); ++i) {
    const char c = mac[i];
    if (i % 3 == 2) {
      if (c != ':') return false;
    } else if (!std::isxdigit(static_cast<unsigned char>(c))) {
      return false;
    }
  }
  return true;
}

std::size_t Dataset::sample_count() const noexcept {
  std::size_t n = 0;
  for (const auto& d : devices) n += d.samples.size();
  return n;
}

const DeviceData* Dataset::find(std::string_view mac) const noexcept {
  for (const auto& d : devices) {
    if (d.record.mac == mac) return &d;
  }
  return nullptr;
}

void validate_sample(const SampleVector& sample, std::string_view where) {
  const std::size_t expected = FeatureSchema::standard().value_count();
  if (sample.values.size() != expected) {
    throw SchemaError(std::string(where) + ": expected " + std::to_string(expected + 1) +
                      " columns, got " + std::to_string(sample.values.size() + 1));
  }
  if (!std::isfinite(sample.timestamp()) || !std::isfinite(sample.temperature())) {
    throw SchemaError(std::string(where) + ": non-finite timestamp or temperature");
  }
  const auto perf = sample.performance();
  for (std::size_t i = 0; i < perf.size(); ++i) {
    if (!std::isfinite(perf[i]) || perf[i] <= 0.0) {
      throw SchemaError(std::string(where) + ": column '" + performance_columns()[i] +
                        "' must be positive and finite");
    }
  }
  if (!is_valid_mac(sample.label)) {
    throw SchemaError(std::string(where) + ": malformed MAC label '" + sample.label + "'");
  }
}

std::string format_number(double value) {
  std::array<char, 64> buf{};
  constexpr double kExactIntegerLimit = 9007199254740992.0;  // 2^53
  if (std::isfinite(value) && value == std::trunc(value) && std::fabs(value) < kExactIntegerLimit) {
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), static_cast<long long>(value));
    return std::string(buf.data(), end);
  }
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

std::string format_row(const SampleVector& sample) {
  std::string line;
  line.reserve(sample.values.size() * 12 + 20);
  for (double v : sample.values) {
    line += format_number(v);
    line += ',';
  }
  line += sample.label;
  return line;
}

std::string format_header(const FeatureSchema& schema) {
  std::string line;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (i) line += ',';
    line += schema.name(i);
  }
  return line;
}

SampleVector parse_row(std::string_view line, std::string_view where) {
  const auto cells = split_commas(line);
  if (cells.size() != FeatureSchema::kColumnCount) {
    throw SchemaError(std::string(where) + ": expected " +
                      std::to_string(FeatureSchema::kColumnCount) + " columns, got " +
                      std::to_string(cells.size()));
  }
  SampleVector sample;
  sample.values.resize(cells.size() - 1);
  for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
    const auto cell = trim(cells[i]);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
      throw ParseError(std::string(where) + ", column " + std::to_string(i + 1) + " ('" +
                       FeatureSchema::standard().name(i) + "'): not a number: '" +
                       std::string(cell) + "'");
    }
    sample.values[i] = v;
  }
  sample.label = std::string(trim(cells.back()));
  validate_sample(sample, where);
  return sample;
}

std::vector<DeviceRecord> read_device_models(const fs::path& directory) {
  const auto path = directory / "MAC-Model.txt";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<DeviceRecord> devices;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto comma = text.find(',');
    if (comma == std::string_view::npos) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 'MAC,model'");
    }
    DeviceRecord rec{std::string(trim(text.substr(0, comma))),
                     std::string(trim(text.substr(comma + 1)))};
    if (!is_valid_mac(rec.mac)) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed MAC '" +
                       rec.mac + "'");
    }
    if (!seen.insert(rec.mac).second) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": duplicate MAC " + rec.mac);
    }
    devices.push_back(std::move(rec));
  }
  return devices;
}

void write_device_models(const std::vector<DeviceRecord>& devices, const fs::path& directory) {
  const auto path = directory / "MAC-Model.txt";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& d : devices) out << d.mac << ',' << d.model << '\n';
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<SampleVector> read_device_csv(const fs::path& file, std::string_view mac) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::vector<SampleVector> samples;
  std::string line;
  std::size_t row = 0;
  double last_timestamp = -INFINITY;
  while (std::getline(in, line)) {
    ++row;
    if (row == 1 && line.rfind("timestamp", 0) == 0) continue;  // header present
    if (trim(line).empty()) continue;
    const std::string where = file.string() + ", row " + std::to_string(row);
    auto sample = parse_row(line, where);
    if (sample.label != mac) {
      throw SchemaError(where + ": label " + sample.label + " does not match file MAC " +
                        std::string(mac));
    }
    if (sample.timestamp() < last_timestamp) {
      throw SchemaError(where + ": timestamp decreases");
    }
    last_timestamp = sample.timestamp();
    samples.push_back(std::move(sample));
  }
  return samples;
}

void write_dataset(const Dataset& dataset, const fs::path& directory) {
  std::set<std::string_view> macs;
  for (const auto& d : dataset.devices) {
    if (!is_valid_mac(d.record.mac)) throw SchemaError("malformed MAC: " + d.record.mac);
    if (!macs.insert(d.record.mac).second) throw SchemaError("duplicate MAC: " + d.record.mac);
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      const auto where = d.record.mac + " sample " + std::to_string(i);
      validate_sample(d.samples[i], where);
      if (d.samples[i].label != d.record.mac) {
        throw SchemaError(where + ": label " + d.samples[i].label + " does not match device");
      }
      if (i > 0 && d.samples[i].timestamp() < d.samples[i - 1].timestamp()) {
        throw SchemaError(where + ": timestamp decreases");
      }
    }
  }

  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory.string() + ": " + ec.message());

  std::vector<fs::path> written;
  const std::string header = format_header();
  for (const auto& d : dataset.devices) {
    const auto path = directory / (d.record.mac + ".csv");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string(), written);
    out << header << '\n';
    for (const auto& s : d.samples) out << format_row(s) << '\n';
    out.flush();
    if (!out) throw IoError("write failed: " + path.string(), written);
    written.push_back(path);
  }
  std::vector<DeviceRecord> records;
  records.reserve(dataset.devices.size());
  for (const auto& d : dataset.devices) records.push_back(d.record);
  try {
    write_device_models(records, directory);
  } catch (const IoError& e) {
    throw IoError(e.what(), written);
  }
}

Dataset read_dataset(const fs::path& directory) {
  Dataset dataset;
  for (auto& rec : read_device_models(directory)) {
    DeviceData data;
    data.samples = read_device_csv(directory / (rec.mac + ".csv"), rec.mac);
    data.record = std::move(rec);
    dataset.devices.push_back(std::move(data));
  }
  return dataset;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty list");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return (lower + upper) / 2.0;
}

SampleVector aggregate_storage_features(const SampleVector& sample) {
  validate_sample(sample);
  SampleVector out;
  out.label = sample.label;
  out.values.assign(sample.values.begin(), sample.values.begin() + kFirstStorageRead);
  for (std::size_t first : {kFirstStorageRead, kFirstStorageWrite}) {
    std::vector<double> ops(sample.values.begin() + first,
                            sample.values.begin() + first + kStorageOps);
    const auto [mn, mx] = std::minmax_element(ops.begin(), ops.end());
    const double lo = *mn;
    const double hi = *mx;
    const double avg = std::accumulate(ops.begin(), ops.end(), 0.0) / kStorageOps;
    out.values.push_back(avg);
    out.values.push_back(median(std::move(ops)));
    out.values.push_back(lo);
    out.values.push_back(hi);
  }
  return out;
}

}  // namespace xcb
