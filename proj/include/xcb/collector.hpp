#pragma once

// Measurement sessions: stability preflight, per-sample assembly of all 215
// features, and bounded sessions that append atomic rows to `<MAC>.csv`.

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xcb/probes.hpp"
#include "xcb/schema.hpp"
#include "xcb/workloads.hpp"

namespace xcb {

/// Returned by read_temperature() when no thermal sensor is available.
inline constexpr double kNoTemperature = -273.0;

struct SessionConfig {
  std::size_t samples_per_session = 800;
  std::string device_mac;
  std::string device_model;
  std::filesystem::path working_dir = ".";
  /// Dataset directory receiving `<MAC>.csv`; defaults to working_dir.
  std::optional<std::filesystem::path> output_dir;
  std::uint64_t seed = 0;
  std::optional<unsigned> pinned_core;
  bool require_fixed_frequency = false;
  bool allow_degraded = false;

  std::filesystem::path dataset_dir() const { return output_dir.value_or(working_dir); }
  std::filesystem::path scratch_dir() const { return working_dir / "scratch"; }
  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

enum class CheckStatus { satisfied, unsatisfied, not_applicable, unknown };
std::string_view to_string(CheckStatus s) noexcept;

enum class StabilityCheck {
  fixed_frequency,
  elevated_priority,
  aslr_disabled,
  core_isolation,
  hash_seed_fixed,
  background_compaction_disabled,
};
inline constexpr std::size_t kStabilityCheckCount = 6;
std::string_view to_string(StabilityCheck c) noexcept;

struct CheckResult {
  StabilityCheck check;
  CheckStatus status = CheckStatus::unknown;
  std::string detail;
};

struct StabilityReport {
  std::array<CheckResult, kStabilityCheckCount> checks;

  StabilityReport();
  CheckResult& operator[](StabilityCheck c) { return checks[static_cast<std::size_t>(c)]; }
  const CheckResult& operator[](StabilityCheck c) const {
    return checks[static_cast<std::size_t>(c)];
  }
  /// True when a system-level measure is unsatisfied or undetectable.
  bool degraded() const noexcept;
  static StabilityReport all_not_applicable(const std::string& detail);
};

/// Read-only view of the host used by preflight. Tests substitute a fake.
class SystemView {
 public:
  virtual ~SystemView() = default;
  virtual std::optional<std::string> read_file(const std::filesystem::path& path) const = 0;
  /// Nice value of this process.
  virtual std::optional<int> nice_value() const = 0;
  /// True under SCHED_FIFO / SCHED_RR.
  virtual std::optional<bool> realtime_policy() const = 0;
  /// CPUs this process may run on.
  virtual std::optional<std::vector<unsigned>> affinity() const = 0;
  virtual std::vector<std::filesystem::path> list_dir(const std::filesystem::path& dir) const = 0;
};

class HostSystemView final : public SystemView {
 public:
  std::optional<std::string> read_file(const std::filesystem::path& path) const override;
  std::optional<int> nice_value() const override;
  std::optional<bool> realtime_policy() const override;
  std::optional<std::vector<unsigned>> affinity() const override;
  std::vector<std::filesystem::path> list_dir(const std::filesystem::path& dir) const override;
};

/// Detects the stability measures; never changes system state.
StabilityReport preflight(const SessionConfig& config, const SystemView& system);

/// Parses a cpulist such as "2-3,5".
std::vector<unsigned> parse_cpu_list(std::string_view text);

/// First thermal zone reading in °C, or kNoTemperature.
double read_host_temperature(const SystemView& system,
                             const std::filesystem::path& thermal_root = "/sys/class/thermal");

/// Everything the collector needs from a device, real or simulated.
class Platform {
 public:
  virtual ~Platform() = default;
  virtual ProbeRegistry& probes() = 0;
  virtual WorkloadExecutor& workloads() = 0;
  virtual double read_temperature() = 0;
  /// Unix seconds.
  virtual double unix_time() = 0;
  virtual StabilityReport preflight(const SessionConfig& config) = 0;
  /// Session setup (core pinning, seeding); called after preflight passes.
  virtual void prepare(const SessionConfig& config) = 0;
  /// Ensures later timestamps do not precede rows already on disk.
  virtual void resume_after(double last_timestamp) = 0;
  virtual bool simulated() const noexcept = 0;
};

struct HostPlatformOptions {
  double sleep_scale = 1.0;
  std::unique_ptr<GpuBackend> gpu;
};

/// The local machine: timer probe, host workloads, sysfs temperature.
class HostPlatform final : public Platform {
 public:
  explicit HostPlatform(HostPlatformOptions options = {});
  ~HostPlatform() override;

  ProbeRegistry& probes() override { return probes_; }
  WorkloadExecutor& workloads() override;
  double read_temperature() override;
  double unix_time() override;
  StabilityReport preflight(const SessionConfig& config) override;
  void prepare(const SessionConfig& config) override;
  void resume_after(double) override {}
  bool simulated() const noexcept override { return false; }

 private:
  HostPlatformOptions options_;
  ProbeRegistry probes_;
  HostSystemView system_;
  std::unique_ptr<HostWorkloads> workloads_;
};

/// Observer counters chosen for one session.
struct Observers {
  CounterBackend* cpu_work = nullptr;    // observes CPU workloads
  CounterBackend* other_work = nullptr;  // observes GPU, memory and storage workloads

  CounterBackend& for_component(Component c) const {
    return c == Component::cpu ? *cpu_work : *other_work;
  }
};

/// CPU work is observed by a GPU counter, everything else by a CPU counter;
/// the timer substitutes for whichever is missing.
Observers choose_observers(const ProbeRegistry& probes);

/// Builds one complete sample. Throws on any failure; nothing partial escapes.
SampleVector collect_sample(const SessionConfig& config, Platform& platform, const Observers& observers);

enum class SampleStatus { ok, failed };

struct SampleRecord {
  std::size_t index = 0;
  SampleStatus status = SampleStatus::ok;
  double timestamp = 0.0;
  std::string error;
};

enum class SessionOutcome { completed, degraded, refused, interrupted, aborted };
std::string_view to_string(SessionOutcome o) noexcept;

struct SessionLog {
  std::string mac;
  std::string model;
  double start_time = 0.0;
  double end_time = 0.0;
  bool simulated = false;
  bool degraded = false;
  bool gpu_surrogate = false;
  bool temperature_available = true;
  StabilityReport stability;
  std::map<std::string, BracketOverhead> bracket_overhead;  // by observer id
  std::vector<SampleRecord> samples;
  std::vector<std::string> abort_reasons;
  std::size_t rows_appended = 0;
  SessionOutcome outcome = SessionOutcome::completed;

  /// One JSON object per line: a header, one line per sample, and a footer.
  std::string to_jsonl() const;
};

struct SessionHooks {
  /// Called after each row is appended, with the number of rows so far.
  std::function<void(std::size_t)> after_row;
  /// Polled between samples; a true value ends the session as interrupted.
  const std::atomic<bool>* stop = nullptr;
  /// Consecutive failed samples tolerated before the session aborts.
  std::size_t max_consecutive_failures = 3;
};

/// Runs one bounded session and appends its rows to `<dataset_dir>/<MAC>.csv`.
/// Also maintains MAC-Model.txt, `<MAC>.meta.json` and `<MAC>.session.jsonl`.
SessionLog run_session(const SessionConfig& config, Platform& platform, const SessionHooks& hooks = {});

/// Truncates a trailing partial row left by a crash. Returns the timestamp of
/// the last complete row, if any.
std::optional<double> repair_device_csv(const std::filesystem::path& file);

/// CLI exit code convention: 0 full session, 2 degraded run, 1 anything else.
int exit_code(const SessionLog& log);

}  // namespace xcb
