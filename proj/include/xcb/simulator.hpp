#pragma once

// Synthetic fleets of virtual devices.
//
// Every device derives its CPU and GPU clocks from one base oscillator through
// PLL multiplication, so each clock carries a device-constant skew. A feature
// measured with a counter of one component while work runs on another shows
// the skew difference, a device-constant offset, a temperature response and
// per-sample multiplicative jitter:
//
//   value = nominal * (1 + skew_term + offset) * (1 + c_T * (T(t) - T_ref)) * (1 + eps)
//
// with eps ~ Normal(0, jitter). Sleep features use nominal = duration * f_gpu
// and skew_term = gpu_skew - cpu_skew.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "xcb/collector.hpp"
#include "xcb/schema.hpp"
#include "xcb/workloads.hpp"

namespace xcb::sim {

struct TemperatureProfile {
  double mean_c = 45.0;
  double daily_amplitude_c = 3.0;
  double noise_sigma_c = 0.5;
};

struct DeviceModelSpec {
  std::string model_name;
  double nominal_cpu_freq = 1.5e9;  // Hz
  double nominal_gpu_freq = 500e6;  // Hz
  /// Nominal duration in ns per non-sleep workload id. Storage entries are per
  /// single 100 kB operation.
  std::map<std::string, double> nominal_ns;
  double skew_sigma_ppm = 30.0;
  double offset_sigma = 2e-3;  // relative, device-constant per feature
  double jitter_sigma = 5e-4;  // relative, per sample
  double temp_coeff_sleep = 0.0;     // relative change per °C, sleep features
  double temp_coeff_other = 2e-6;    // relative change per °C, everything else
  /// Per-workload multipliers on jitter_sigma (heterogeneous feature scales).
  std::map<std::string, double> jitter_scale;
  TemperatureProfile temp_profile;

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;
  double jitter_for(const std::string& workload_id) const;
  double temp_coeff_for(const FeatureSlot& slot) const;
};

/// Built-in models mirroring the four board generations of the reference fleet.
DeviceModelSpec rpi4_like();
DeviceModelSpec rpi3_like();
DeviceModelSpec rpi1_like();
DeviceModelSpec rpi_zero_like();
/// Looks up a built-in model by name ("RPi4like", "RPi3like", "RPi1like", "RPiZerolike").
DeviceModelSpec builtin_model(std::string_view name);

struct VirtualDevice {
  std::string mac;
  DeviceModelSpec model;
  double cpu_skew_ppm = 0.0;
  double gpu_skew_ppm = 0.0;
  /// Relative device-constant offset per performance column (215 entries).
  std::vector<double> offsets;
  /// Multiplier on the storage_write nominal; 1 unless the fleet is bimodal.
  double write_center = 1.0;
  std::uint64_t rng_seed = 0;
};

/// Device with no skew, offsets or jitter perturbations applied yet.
VirtualDevice ideal_device(const DeviceModelSpec& model, std::string mac, std::uint64_t seed = 1);

struct FarmEntry {
  DeviceModelSpec model;
  std::size_t device_count = 1;
};

struct FarmConfig {
  std::vector<FarmEntry> models;
  std::uint64_t master_seed = 42;
  std::size_t samples_per_device = 100;
  double start_time = 1638748800.0;  // 2021-12-06T00:00:00Z
  /// Splits each model's devices between two storage_write centres.
  bool bimodal_storage_write = false;
  double write_center_ratio = 1.3;

  void validate() const;
  /// 4 models x {15, 10, 10, 10} devices.
  static FarmConfig default_fleet();
};

FarmConfig farm_from_json(const std::string& text);
std::string farm_to_json(const FarmConfig& config);

std::vector<VirtualDevice> make_farm(const FarmConfig& config);

/// Noise-free value of the feature at temperature `temperature_c`.
double expected_feature(const VirtualDevice& device, const FeatureSlot& slot, double temperature_c);

/// Deterministic temperature; depends only on (seed, t).
double temperature_at(const TemperatureProfile& profile, std::uint64_t seed, double t);

/// Per-device generator state.
class DeviceSimulator {
 public:
  explicit DeviceSimulator(VirtualDevice device, std::uint64_t stream = 0);

  const VirtualDevice& device() const noexcept { return device_; }
  double temperature(double t) const;
  /// One noisy value for `slot` at virtual time t; advances the generator.
  double simulate_feature(const FeatureSlot& slot, double t);
  /// Same, with the temperature already known.
  double simulate_at(const FeatureSlot& slot, double temperature_c);
  /// Full sample starting at virtual time t. Returns the sample and the
  /// virtual seconds it took.
  std::pair<SampleVector, double> simulate_sample(double t);
  /// Virtual seconds a measured value corresponds to.
  double seconds_for(const FeatureSlot& slot, double value) const;

 private:
  VirtualDevice device_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

double simulate_feature(DeviceSimulator& device, const FeatureSlot& slot, double t);

Dataset simulate_dataset(const std::vector<VirtualDevice>& farm, std::size_t samples_per_device,
                         double start_time = 1638748800.0);
Dataset simulate_dataset(const FarmConfig& config);

/// Counter that advances only when the simulated platform moves virtual time.
class SimCounter final : public CounterBackend {
 public:
  SimCounter(std::string id, SourceKind kind, double nominal_hz, double effective_hz);
  const CounterSource& source() const noexcept override { return source_; }
  std::uint64_t read() override { return value_; }
  double effective_hz() const noexcept { return effective_hz_; }
  /// Advances by exactly `ticks`.
  void advance_ticks(std::uint64_t ticks) noexcept { value_ += ticks; }
  /// Advances by `seconds` of true time, carrying fractional ticks.
  void advance_seconds(double seconds) noexcept;

 private:
  CounterSource source_;
  double effective_hz_;
  std::uint64_t value_ = 0;
  double carry_ = 0.0;
};

/// A virtual device behind the collector's Platform interface. Sleeps and
/// workloads consume virtual time only.
class SimulatedPlatform final : public Platform {
 public:
  SimulatedPlatform(VirtualDevice device, double start_time);
  SimulatedPlatform(const SimulatedPlatform&) = delete;
  SimulatedPlatform& operator=(const SimulatedPlatform&) = delete;

  ProbeRegistry& probes() override { return probes_; }
  WorkloadExecutor& workloads() override { return executor_; }
  /// Also fixes the temperature used by the workloads that follow.
  double read_temperature() override;
  double unix_time() override { return now_; }
  StabilityReport preflight(const SessionConfig& config) override;
  void prepare(const SessionConfig& config) override;
  void resume_after(double last_timestamp) override;
  bool simulated() const noexcept override { return true; }

  const VirtualDevice& device() const noexcept { return sim_.device(); }
  SimCounter& cpu_counter() noexcept { return *cpu_; }
  SimCounter& gpu_counter() noexcept { return *gpu_; }
  /// Moves virtual time forward, advancing both counters.
  void advance(double seconds);

 private:
  class Executor final : public WorkloadExecutor {
   public:
    explicit Executor(SimulatedPlatform& owner) : owner_(owner) {}
    void run(const FeatureSlot& slot) override;
    bool gpu_surrogate() const noexcept override { return false; }

   private:
    SimulatedPlatform& owner_;
  };

  DeviceSimulator sim_;
  ProbeRegistry probes_;
  SimCounter* cpu_ = nullptr;
  SimCounter* gpu_ = nullptr;
  Executor executor_;
  double now_;
  // Read once at sample start; drives the thermal term of that sample.
  double sample_temperature_ = 0.0;
};

/// Gap inserted between sessions, standing in for a reboot.
inline constexpr double kRestartGapSeconds = 60.0;

}  // namespace xcb::sim
