#include "xcb/workloads.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "xcb/schema.hpp"

namespace xcb {
namespace fs = std::filesystem;

namespace {

// Keeps workload results observable so the optimiser cannot drop the work.
volatile std::uint64_t g_sink = 0;

std::vector<WorkloadSpec> build_registry() {
  using P = std::map<std::string, double>;
  return {
      {"cpu_sleep", Component::cpu, P{{"d1", 1}, {"d2", 2}, {"d3", 5}, {"d4", 10}, {"d5", 120}}},
      {"cpu_string_hash", Component::cpu, P{{"payload_bytes", kHashPayloadBytes}}},
      {"cpu_pseudo_random", Component::cpu, P{{"draws", 1}}},
      {"cpu_urandom", Component::cpu, P{{"bytes", 100.0 * 1024 * 1024}}},
      {"cpu_fib", Component::cpu, P{{"n", 20}}},
      {"gpu_matrixmul", Component::gpu, P{{"dim", kGpuMatrixDim}}},
      {"gpu_matrixsum", Component::gpu, P{{"dim", kGpuMatrixDim}}},
      {"gpu_scopy", Component::gpu, P{{"elements", kGpuMatrixDim * kGpuMatrixDim}}},
      {"mem_list_creation", Component::memory, P{{"elements", 1000}}},
      {"mem_reserve", Component::memory, P{{"bytes", 100.0 * 1024 * 1024}}},
      {"mem_csv_read", Component::memory, P{{"bytes", kCsvFixtureBytes}}},
      {"storage_read", Component::storage,
       P{{"block_bytes", kStorageBlockBytes}, {"repetitions", kStorageRepetitions}}},
      {"storage_write", Component::storage,
       P{{"block_bytes", kStorageBlockBytes}, {"repetitions", kStorageRepetitions}}},
  };
}

std::vector<FeatureSlot> build_slots() {
  const auto& schema = FeatureSchema::standard();
  std::vector<FeatureSlot> slots;
  for (const auto& spec : registry()) {
    const auto cols = spec.columns();
    for (std::size_t rep = 0; rep < cols.size(); ++rep) {
      slots.push_back(FeatureSlot{schema.index_of(cols[rep]), &spec, rep});
    }
  }
  std::sort(slots.begin(), slots.end(),
            [](const FeatureSlot& a, const FeatureSlot& b) { return a.column < b.column; });
  return slots;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::byte* aligned_buffer(std::size_t bytes) {
  constexpr std::size_t kAlign = 4096;
  const std::size_t rounded = (bytes + kAlign - 1) / kAlign * kAlign;
  void* p = std::aligned_alloc(kAlign, rounded);
  if (!p) throw std::bad_alloc();
  return static_cast<std::byte*>(p);
}

[[noreturn]] void throw_errno(const std::string& what) {
  throw std::runtime_error(what + ": " + std::strerror(errno));
}

}  // namespace

std::vector<std::string> WorkloadSpec::columns() const {
  if (id == "cpu_sleep") {
    return {"cpu_sleep_1s", "cpu_sleep_2s", "cpu_sleep_5s", "cpu_sleep_10s", "cpu_sleep_120s"};
  }
  if (id == "storage_read" || id == "storage_write") {
    std::vector<std::string> cols;
    for (std::size_t i = 1; i <= repetitions(); ++i) cols.push_back(id + "_" + std::to_string(i));
    return cols;
  }
  return {id};
}

std::size_t WorkloadSpec::repetitions() const {
  if (id == "cpu_sleep") return 5;
  if (auto it = params.find("repetitions"); it != params.end()) return static_cast<std::size_t>(it->second);
  return 1;
}

double WorkloadSpec::param(const std::string& key) const {
  const auto it = params.find(key);
  if (it == params.end()) throw std::out_of_range("workload " + id + " has no parameter " + key);
  return it->second;
}

const std::vector<WorkloadSpec>& registry() {
  static const std::vector<WorkloadSpec> specs = build_registry();
  return specs;
}

const WorkloadSpec& workload(std::string_view id) {
  for (const auto& s : registry()) {
    if (s.id == id) return s;
  }
  throw std::out_of_range("unknown workload: " + std::string(id));
}

std::span<const FeatureSlot> feature_slots() {
  static const std::vector<FeatureSlot> slots = build_slots();
  return slots;
}

const FeatureSlot& slot_for_column(std::string_view column) {
  const auto idx = FeatureSchema::standard().index_of(column);
  for (const auto& s : feature_slots()) {
    if (s.column == idx) return s;
  }
  throw std::out_of_range("column is not a performance feature: " + std::string(column));
}

std::uint64_t run_fib(unsigned n) {
  if (n < 1 || n > 93) throw std::invalid_argument("fibonacci index must be in [1, 93]");
  std::uint64_t prev = 0;
  std::uint64_t cur = 1;
  for (unsigned i = 1; i < n; ++i) {
    const std::uint64_t next = prev + cur;
    prev = cur;
    cur = next;
  }
  return cur;
}

std::span<const std::byte> hash_payload() {
  static const std::array<std::byte, kHashPayloadBytes> payload = [] {
    std::array<std::byte, kHashPayloadBytes> p{};
    constexpr std::string_view text = "cross-component benchmark fixed hash payload ";
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<std::byte>(text[i % text.size()]);
    return p;
  }();
  return payload;
}

std::uint64_t run_string_hash(std::span<const std::byte> payload, std::uint64_t seed) {
  if (payload.empty()) throw std::invalid_argument("hash payload must not be empty");
  constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int i = 0; i < 8; ++i) {
    h ^= (seed >> (8 * i)) & 0xff;
    h *= kPrime;
  }
  for (std::byte b : payload) {
    h ^= static_cast<std::uint64_t>(b);
    h *= kPrime;
  }
  return h;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0f;
  return m;
}

Matrix Matrix::seeded(std::size_t n, std::uint64_t seed) {
  Matrix m(n);
  std::uint64_t state = seed;
  for (auto& v : m.data) {
    // Uniform in [-1, 1) with 24 significant bits.
    v = static_cast<float>(static_cast<double>(splitmix64(state) >> 40) / 8388608.0 - 1.0);
  }
  return m;
}

void CpuSurrogate::matrixmul(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.dim != b.dim || out.dim != a.dim) throw std::invalid_argument("matrix dimensions differ");
  const std::size_t n = a.dim;
  std::fill(out.data.begin(), out.data.end(), 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const float aik = a.at(i, k);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aik * b.at(k, j);
    }
  }
}

void CpuSurrogate::matrixsum(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.dim != b.dim || out.dim != a.dim) throw std::invalid_argument("matrix dimensions differ");
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
}

void CpuSurrogate::scopy(std::span<const float> in, std::span<float> out) {
  if (in.size() != out.size()) throw std::invalid_argument("scopy buffers differ in size");
  std::copy(in.begin(), in.end(), out.begin());
}

GpuOperands::GpuOperands(std::size_t dim, std::uint64_t seed)
    : a(Matrix::seeded(dim, seed)), b(Matrix::seeded(dim, seed + 1)), out(dim) {}

void run_gpu_surrogate(GpuKernel kind, GpuBackend& backend, GpuOperands& ops) {
  switch (kind) {
    case GpuKernel::matrixmul: backend.matrixmul(ops.a, ops.b, ops.out); break;
    case GpuKernel::matrixsum: backend.matrixsum(ops.a, ops.b, ops.out); break;
    case GpuKernel::scopy: backend.scopy(ops.a.data, ops.out.data); break;
  }
}

StorageScratch::StorageScratch(const fs::path& file, std::size_t block_bytes, std::size_t blocks)
    : path_(file), block_bytes_(block_bytes), blocks_(blocks) {
  if (block_bytes == 0 || blocks == 0) throw std::invalid_argument("empty storage scratch");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  buffer_ = aligned_buffer(block_bytes_);
  write_buffer_ = aligned_buffer(block_bytes_);
  const auto payload = pattern(blocks_);
  std::memcpy(write_buffer_, payload.data(), block_bytes_);

  write_fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT, 0644);
  if (write_fd_ < 0) throw_errno("cannot open " + path_.string());
  const auto want = static_cast<off_t>(block_bytes_ * blocks_);
  struct stat st {};
  if (::fstat(write_fd_, &st) != 0) throw_errno("stat " + path_.string());
  if (st.st_size != want) {
    // Preallocate once with the deterministic pattern so reads never hit holes.
    for (std::size_t b = 0; b < blocks_; ++b) {
      const auto bytes = pattern(b);
      if (::pwrite(write_fd_, bytes.data(), bytes.size(), static_cast<off_t>(b * block_bytes_)) !=
          static_cast<ssize_t>(bytes.size())) {
        throw_errno("preallocate " + path_.string());
      }
    }
    if (::ftruncate(write_fd_, want) != 0) throw_errno("truncate " + path_.string());
    ::fdatasync(write_fd_);
  }

#ifdef O_DIRECT
  read_fd_ = ::open(path_.c_str(), O_RDONLY | O_DIRECT);
  if (read_fd_ >= 0) {
    // Some filesystems accept the flag but fail the first aligned read.
    if (::pread(read_fd_, buffer_, block_bytes_, 0) == static_cast<ssize_t>(block_bytes_)) {
      direct_ = true;
    } else {
      ::close(read_fd_);
      read_fd_ = -1;
    }
  }
#endif
  if (read_fd_ < 0) {
    read_fd_ = ::open(path_.c_str(), O_RDONLY);
    if (read_fd_ < 0) throw_errno("cannot open " + path_.string());
  }
}

StorageScratch::~StorageScratch() {
  if (read_fd_ >= 0) ::close(read_fd_);
  if (write_fd_ >= 0) ::close(write_fd_);
  std::free(buffer_);
  std::free(write_buffer_);
}

std::vector<std::byte> StorageScratch::pattern(std::size_t block) const {
  std::vector<std::byte> bytes(block_bytes_);
  std::uint64_t state = 0xb10c0000ULL + block;
  for (std::size_t i = 0; i < bytes.size(); i += 8) {
    const std::uint64_t word = splitmix64(state);
    std::memcpy(bytes.data() + i, &word, std::min<std::size_t>(8, bytes.size() - i));
  }
  return bytes;
}

void StorageScratch::drop_cache(std::size_t block) {
  if (direct_) return;
  const auto offset = static_cast<off_t>((block % blocks_) * block_bytes_);
  ::fdatasync(write_fd_);
  ::posix_fadvise(read_fd_, offset, static_cast<off_t>(block_bytes_), POSIX_FADV_DONTNEED);
}

void StorageScratch::read_block(std::size_t block) {
  const auto offset = static_cast<off_t>((block % blocks_) * block_bytes_);
  const ssize_t n = ::pread(read_fd_, buffer_, block_bytes_, offset);
  if (n != static_cast<ssize_t>(block_bytes_)) throw_errno("short read from " + path_.string());
}

void StorageScratch::write_block(std::size_t block) {
  const auto offset = static_cast<off_t>((block % blocks_) * block_bytes_);
  const ssize_t n = ::pwrite(write_fd_, write_buffer_, block_bytes_, offset);
  if (n != static_cast<ssize_t>(block_bytes_)) throw_errno("short write to " + path_.string());
  if (::fdatasync(write_fd_) != 0) throw_errno("fdatasync " + path_.string());
}

std::vector<std::uint64_t> run_storage_io(StorageDirection direction, CounterBackend& observer,
                                          StorageScratch& scratch, std::size_t repetitions) {
  std::vector<std::uint64_t> durations;
  durations.reserve(repetitions);
  const char* id = direction == StorageDirection::read ? "storage_read" : "storage_write";
  for (std::size_t i = 0; i < repetitions; ++i) {
    if (direction == StorageDirection::read) {
      scratch.drop_cache(i);
      durations.push_back(measure(observer, Component::storage, id, [&] { scratch.read_block(i); }).delta);
    } else {
      durations.push_back(measure(observer, Component::storage, id, [&] { scratch.write_block(i); }).delta);
    }
  }
  return durations;
}

void write_csv_fixture(const fs::path& file, std::size_t bytes) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::string content;
  content.reserve(bytes);
  std::uint64_t state = 0xc5f1;
  std::size_t row = 0;
  while (content.size() < bytes) {
    std::string line = std::to_string(row++);
    for (int c = 0; c < 8; ++c) {
      line += ',';
      line += std::to_string(splitmix64(state) % 100000);
    }
    line += '\n';
    content += line;
  }
  content.resize(bytes);
  content.back() = '\n';
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("cannot write fixture " + file.string());
}

HostWorkloads::HostWorkloads(HostWorkloadOptions options, std::unique_ptr<GpuBackend> gpu)
    : options_(std::move(options)),
      gpu_(gpu ? std::move(gpu) : std::make_unique<CpuSurrogate>()),
      rng_(options_.seed) {
  csv_fixture_ = options_.scratch_dir / "fixture.csv";
  storage_file_ = options_.scratch_dir / "storage.bin";
}

HostWorkloads::~HostWorkloads() = default;

void HostWorkloads::prepare() {
  fs::create_directories(options_.scratch_dir);
  if (!fs::exists(csv_fixture_) || fs::file_size(csv_fixture_) != kCsvFixtureBytes) {
    write_csv_fixture(csv_fixture_);
  }
  csv_buffer_.resize(kCsvFixtureBytes);
  operands_ = std::make_unique<GpuOperands>();
  storage_ = std::make_unique<StorageScratch>(storage_file_);
  urandom_buffer_.resize(static_cast<std::size_t>(workload("cpu_urandom").param("bytes")));
}

void HostWorkloads::stage(const FeatureSlot& slot) {
  if (slot.spec->id == "storage_read") storage_->drop_cache(storage_cursor_);
}

void HostWorkloads::run(const FeatureSlot& slot) {
  const auto& id = slot.spec->id;
  if (id == "cpu_sleep") {
    const double secs = slot.spec->param("d" + std::to_string(slot.repetition + 1)) * options_.sleep_scale;
    std::this_thread::sleep_for(std::chrono::duration<double>(secs));
  } else if (id == "cpu_string_hash") {
    g_sink = run_string_hash(hash_payload(), options_.seed);
  } else if (id == "cpu_pseudo_random") {
    g_sink = rng_();
  } else if (id == "cpu_urandom") {
    run_urandom();
  } else if (id == "cpu_fib") {
    g_sink = run_fib(20);
  } else if (id == "gpu_matrixmul") {
    run_gpu_surrogate(GpuKernel::matrixmul, *gpu_, *operands_);
  } else if (id == "gpu_matrixsum") {
    run_gpu_surrogate(GpuKernel::matrixsum, *gpu_, *operands_);
  } else if (id == "gpu_scopy") {
    run_gpu_surrogate(GpuKernel::scopy, *gpu_, *operands_);
  } else if (id == "mem_list_creation") {
    std::vector<int> list;
    for (int i = 0; i < 1000; ++i) list.push_back(i);
    g_sink = static_cast<std::uint64_t>(list.back());
  } else if (id == "mem_reserve") {
    const auto bytes = static_cast<std::size_t>(slot.spec->param("bytes"));
    auto block = std::make_unique<char[]>(bytes);
    std::memset(block.get(), 0xa5, bytes);
    g_sink = static_cast<std::uint64_t>(block[bytes - 1]);
  } else if (id == "mem_csv_read") {
    run_csv_read();
  } else if (id == "storage_read") {
    storage_->read_block(storage_cursor_++);
  } else if (id == "storage_write") {
    storage_->write_block(storage_cursor_++);
  } else {
    throw std::logic_error("no host implementation for workload " + id);
  }
}

void HostWorkloads::run_urandom() {
  const int fd = ::open("/dev/urandom", O_RDONLY);
  if (fd < 0) throw_errno("open /dev/urandom");
  std::size_t done = 0;
  while (done < urandom_buffer_.size()) {
    const ssize_t n = ::read(fd, urandom_buffer_.data() + done, urandom_buffer_.size() - done);
    if (n <= 0) {
      ::close(fd);
      throw_errno("read /dev/urandom");
    }
    done += static_cast<std::size_t>(n);
  }
  ::close(fd);
}

void HostWorkloads::run_csv_read() {
  std::ifstream in(csv_fixture_, std::ios::binary);
  in.read(csv_buffer_.data(), static_cast<std::streamsize>(csv_buffer_.size()));
  if (in.gcount() != static_cast<std::streamsize>(csv_buffer_.size())) {
    throw std::runtime_error("short read of " + csv_fixture_.string());
  }
  std::uint64_t sum = 0;
  const char* p = csv_buffer_.data();
  const char* end = p + csv_buffer_.size();
  while (p < end) {
    std::uint64_t v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec == std::errc()) sum += v;
    p = next + 1;
  }
  g_sink = sum;
}

}  // namespace xcb
