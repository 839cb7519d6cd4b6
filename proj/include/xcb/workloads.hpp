#pragma once

// Benchmark workloads, one per performance feature family.
//
// registry() lists the 13 workload kinds. Expanding repetitions gives the 215
// performance columns, each bound to exactly one (workload, repetition) slot.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xcb/probes.hpp"
#include "xcb/types.hpp"

namespace xcb {

struct WorkloadSpec {
  std::string id;
  Component target = Component::cpu;
  std::map<std::string, double> params;

  /// Schema columns produced by this workload, in schema order.
  std::vector<std::string> columns() const;
  std::size_t repetitions() const;
  double param(const std::string& key) const;
};

/// The 13 workload kinds in schema order.
const std::vector<WorkloadSpec>& registry();
const WorkloadSpec& workload(std::string_view id);

/// One performance column and the workload repetition that fills it.
struct FeatureSlot {
  std::size_t column = 0;  // index into FeatureSchema::standard()
  const WorkloadSpec* spec = nullptr;
  std::size_t repetition = 0;
};

/// 215 slots in schema order.
std::span<const FeatureSlot> feature_slots();
const FeatureSlot& slot_for_column(std::string_view column);

inline constexpr std::size_t kStorageBlockBytes = 100 * 1024;
inline constexpr std::size_t kStorageRepetitions = 100;
inline constexpr std::size_t kGpuMatrixDim = 96;
inline constexpr std::size_t kCsvFixtureBytes = 500 * 1024;
inline constexpr std::size_t kHashPayloadBytes = 1024;
inline constexpr std::string_view kHashFunctionId = "fnv1a64-seeded";

/// F(n) with F(1) = F(2) = 1, iterative. Requires 1 <= n <= 93.
std::uint64_t run_fib(unsigned n);

/// The fixed 1 KiB payload hashed by cpu_string_hash.
std::span<const std::byte> hash_payload();

/// Seeded 64-bit FNV-1a. Throws std::invalid_argument on an empty payload.
std::uint64_t run_string_hash(std::span<const std::byte> payload, std::uint64_t seed);

/// Square single-precision matrix.
struct Matrix {
  std::size_t dim = 0;
  std::vector<float> data;

  explicit Matrix(std::size_t n = 0) : dim(n), data(n * n, 0.0f) {}
  float& at(std::size_t r, std::size_t c) { return data[r * dim + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * dim + c]; }
  static Matrix identity(std::size_t n);
  static Matrix seeded(std::size_t n, std::uint64_t seed);
  bool operator==(const Matrix&) const = default;
};

enum class GpuKernel { matrixmul, matrixsum, scopy };

/// Executes the three GPU kernels. Hardware backends (VideoCore QPU, Mali)
/// implement this interface; CpuSurrogate runs them on the host CPU.
class GpuBackend {
 public:
  virtual ~GpuBackend() = default;
  virtual std::string_view id() const noexcept = 0;
  virtual bool is_surrogate() const noexcept = 0;
  virtual void matrixmul(const Matrix& a, const Matrix& b, Matrix& out) = 0;
  virtual void matrixsum(const Matrix& a, const Matrix& b, Matrix& out) = 0;
  /// Buffer copy standing in for the shadow-processing kernel.
  virtual void scopy(std::span<const float> in, std::span<float> out) = 0;
};

class CpuSurrogate final : public GpuBackend {
 public:
  std::string_view id() const noexcept override { return "cpu-surrogate"; }
  bool is_surrogate() const noexcept override { return true; }
  void matrixmul(const Matrix& a, const Matrix& b, Matrix& out) override;
  void matrixsum(const Matrix& a, const Matrix& b, Matrix& out) override;
  void scopy(std::span<const float> in, std::span<float> out) override;
};

/// Operands for the GPU kernels, initialised from a fixed seed.
struct GpuOperands {
  Matrix a;
  Matrix b;
  Matrix out;
  explicit GpuOperands(std::size_t dim = kGpuMatrixDim, std::uint64_t seed = 0x5eed);
};

void run_gpu_surrogate(GpuKernel kind, GpuBackend& backend, GpuOperands& operands);

enum class StorageDirection { read, write };

/// Preallocated scratch file for storage workloads. Blocks are accessed
/// sequentially and wrap. Reads bypass the page cache through O_DIRECT when
/// the filesystem allows it; otherwise drop_cache() must be called before each
/// read.
class StorageScratch {
 public:
  StorageScratch(const std::filesystem::path& file, std::size_t block_bytes = kStorageBlockBytes,
                 std::size_t blocks = kStorageRepetitions);
  ~StorageScratch();
  StorageScratch(const StorageScratch&) = delete;
  StorageScratch& operator=(const StorageScratch&) = delete;

  /// Invalidates cached pages of the block about to be read. No-op under O_DIRECT.
  void drop_cache(std::size_t block);
  /// One read of exactly block_bytes into the internal buffer.
  void read_block(std::size_t block);
  /// One write of exactly block_bytes, flushed to the device before returning.
  void write_block(std::size_t block);

  bool direct_io() const noexcept { return direct_; }
  std::size_t block_bytes() const noexcept { return block_bytes_; }
  std::size_t blocks() const noexcept { return blocks_; }
  /// Bytes of the most recent read.
  std::span<const std::byte> buffer() const noexcept { return {buffer_, block_bytes_}; }
  /// Bytes every write_block() stores.
  std::span<const std::byte> write_payload() const noexcept { return {write_buffer_, block_bytes_}; }
  /// Deterministic content written to `block`.
  std::vector<std::byte> pattern(std::size_t block) const;

 private:
  std::filesystem::path path_;
  std::size_t block_bytes_;
  std::size_t blocks_;
  int read_fd_ = -1;
  int write_fd_ = -1;
  bool direct_ = false;
  std::byte* buffer_ = nullptr;
  std::byte* write_buffer_ = nullptr;
};

/// Times `repetitions` I/O operations, one bracket each, on `observer`.
/// Throws on any I/O error; no partial result is returned.
std::vector<std::uint64_t> run_storage_io(StorageDirection direction, CounterBackend& observer,
                                          StorageScratch& scratch,
                                          std::size_t repetitions = kStorageRepetitions);

/// Executes workload repetitions for the collector. stage() runs outside the
/// measurement bracket, run() is the only call inside it.
class WorkloadExecutor {
 public:
  virtual ~WorkloadExecutor() = default;
  virtual void prepare() {}
  virtual void stage(const FeatureSlot&) {}
  virtual void run(const FeatureSlot& slot) = 0;
  /// True when GPU kernels run on the CPU surrogate.
  virtual bool gpu_surrogate() const noexcept = 0;
};

struct HostWorkloadOptions {
  std::filesystem::path scratch_dir;
  std::uint64_t seed = 0;
  /// Scales every sleep; 1.0 for real sessions. Tests may shorten sleeps.
  double sleep_scale = 1.0;
};

/// Runs the workloads on the local machine.
class HostWorkloads final : public WorkloadExecutor {
 public:
  explicit HostWorkloads(HostWorkloadOptions options, std::unique_ptr<GpuBackend> gpu = nullptr);
  ~HostWorkloads() override;

  void prepare() override;
  void stage(const FeatureSlot& slot) override;
  void run(const FeatureSlot& slot) override;
  bool gpu_surrogate() const noexcept override { return gpu_->is_surrogate(); }

  std::string_view gpu_backend_id() const noexcept { return gpu_->id(); }
  const std::filesystem::path& csv_fixture() const noexcept { return csv_fixture_; }
  const std::filesystem::path& storage_file() const noexcept { return storage_file_; }

 private:
  void run_urandom();
  void run_csv_read();

  HostWorkloadOptions options_;
  std::unique_ptr<GpuBackend> gpu_;
  std::mt19937_64 rng_;
  std::filesystem::path csv_fixture_;
  std::filesystem::path storage_file_;
  std::unique_ptr<GpuOperands> operands_;
  std::unique_ptr<StorageScratch> storage_;
  std::vector<std::byte> urandom_buffer_;
  std::vector<char> csv_buffer_;
  std::size_t storage_cursor_ = 0;
};

/// Writes the fixed-content CSV fixture of exactly `bytes` bytes.
void write_csv_fixture(const std::filesystem::path& file, std::size_t bytes = kCsvFixtureBytes);

}  // namespace xcb
