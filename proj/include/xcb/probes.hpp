#pragma once

// Counter sources and cross-component measurement brackets.
//
// A measurement reads an observer counter, runs exactly one workload, and
// reads the observer again. The observer must be clocked independently of the
// component the workload runs on, so CPU work is timed by a GPU (or timer)
// counter and GPU/memory/storage work by a CPU (or timer) counter.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "xcb/types.hpp"

namespace xcb {

class SourceUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MeasurementInvalid : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CounterSource {
  std::string id;
  SourceKind kind = SourceKind::timer;
  std::optional<double> nominal_frequency;  // Hz; ticks per second
  bool monotonic = true;
};

struct CounterReading {
  std::string source_id;
  std::uint64_t value = 0;
};

/// Backend extension point. Platform drivers (GPU cycle registers, CPU cycle
/// counters) implement this and register with a ProbeRegistry.
class CounterBackend {
 public:
  virtual ~CounterBackend() = default;
  virtual const CounterSource& source() const noexcept = 0;
  /// Raw counter value. Throws SourceUnavailable when the backend is lost.
  virtual std::uint64_t read() = 0;
  /// Width of the hardware counter; deltas wrap modulo 2^bits.
  virtual unsigned counter_bits() const noexcept { return 64; }
};

/// Monotonic nanosecond clock. Always present.
class TimerBackend final : public CounterBackend {
 public:
  TimerBackend();
  const CounterSource& source() const noexcept override { return source_; }
  std::uint64_t read() override;

 private:
  CounterSource source_;
  std::chrono::steady_clock::time_point origin_;
};

/// Holds the counter sources available to one collector thread.
class ProbeRegistry {
 public:
  static constexpr std::string_view kTimerId = "timer";

  /// Creates a registry holding the timer source only.
  ProbeRegistry();
  /// Creates a registry without the default timer; used by simulated devices.
  static ProbeRegistry without_timer();

  ProbeRegistry(ProbeRegistry&&) noexcept = default;
  ProbeRegistry& operator=(ProbeRegistry&&) noexcept = default;

  /// Throws std::invalid_argument on duplicate ids.
  CounterBackend& register_backend(std::unique_ptr<CounterBackend> backend);
  void unregister(std::string_view id);

  std::vector<CounterSource> list_sources() const;
  /// Throws SourceUnavailable for unknown ids.
  CounterBackend& backend(std::string_view id) const;
  CounterBackend* find(std::string_view id) const noexcept;
  /// First registered source of the given kind, if any.
  CounterBackend* first_of(SourceKind kind) const noexcept;

  CounterReading read(const CounterSource& source) const;

 private:
  std::vector<std::unique_ptr<CounterBackend>> backends_;
};

struct CrossMeasurement {
  std::string observer;
  Component observed = Component::cpu;
  std::string workload_id;
  std::uint64_t delta = 0;
  std::string duration_tag;
};

/// Modular counter difference. Throws MeasurementInvalid when the apparent
/// delta exceeds half the counter period (a backwards step or multiple wraps).
std::uint64_t counter_delta(std::uint64_t before, std::uint64_t after, unsigned bits);

/// Runs `workload` once between two reads of `observer`. Nothing else happens
/// inside the bracket.
template <class Workload>
CrossMeasurement measure(CounterBackend& observer, Component observed, std::string_view workload_id,
                         Workload&& workload) {
  const auto& src = observer.source();
  if (!may_observe(src.kind, observed)) {
    throw std::invalid_argument("source '" + src.id + "' cannot observe its own component (" +
                                std::string(to_string(observed)) + ")");
  }
  CrossMeasurement m;
  m.observer = src.id;
  m.observed = observed;
  m.workload_id = std::string(workload_id);
  m.duration_tag = "t_" + std::string(to_string(observed)) + "_exec";
  const unsigned bits = observer.counter_bits();

  const std::uint64_t before = observer.read();
  std::forward<Workload>(workload)();
  const std::uint64_t after = observer.read();

  m.delta = counter_delta(before, after, bits);
  return m;
}

/// Cost of an empty bracket on one source.
struct BracketOverhead {
  std::uint64_t min = 0;
  std::uint64_t max = 0;
  double mean = 0.0;
  std::size_t iterations = 0;
};

BracketOverhead measure_bracket_overhead(CounterBackend& source, std::size_t iterations = 1000);

using Sleeper = std::function<void(std::chrono::nanoseconds)>;

/// Real-time sleep used by default.
void real_sleep(std::chrono::nanoseconds d);

/// Ratio of ticks of `source` to ticks of `reference` over `interval`.
/// Identical sources give exactly 1.
double calibrate(CounterBackend& source, CounterBackend& reference, std::chrono::nanoseconds interval,
                 const Sleeper& sleep = real_sleep);

/// Skew in parts per million of a measured ratio against the nominal ratio.
double skew_ppm(double measured_ratio, double nominal_ratio);

}  // namespace xcb
