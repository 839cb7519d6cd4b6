#include <doctest.h>

#include <chrono>
#include <thread>

#include "xcb/probes.hpp"
#include "xcb/simulator.hpp"

using namespace xcb;
using namespace std::chrono_literals;

namespace {

// Counter derived from the steady clock at a chosen rate.
class ScaledClockCounter final : public CounterBackend {
 public:
  ScaledClockCounter(std::string id, SourceKind kind, double hz)
      : source_{std::move(id), kind, hz, true}, hz_(hz), origin_(std::chrono::steady_clock::now()) {}
  const CounterSource& source() const noexcept override { return source_; }
  std::uint64_t read() override {
    const auto ns = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - origin_).count();
    return static_cast<std::uint64_t>(ns * hz_ / 1e9);
  }

 private:
  CounterSource source_;
  double hz_;
  std::chrono::steady_clock::time_point origin_;
};

// Counter on a shared virtual clock, advanced by a fake sleeper.
struct VirtualClock {
  double seconds = 0.0;
};

class VirtualCounter final : public CounterBackend {
 public:
  VirtualCounter(std::string id, SourceKind kind, double hz, const VirtualClock& clock)
      : source_{std::move(id), kind, hz, true}, hz_(hz), clock_(clock) {}
  const CounterSource& source() const noexcept override { return source_; }
  std::uint64_t read() override { return static_cast<std::uint64_t>(clock_.seconds * hz_); }

 private:
  CounterSource source_;
  double hz_;
  const VirtualClock& clock_;
};

// Records the order of reads and workload calls.
class TraceCounter final : public CounterBackend {
 public:
  TraceCounter(SourceKind kind, std::vector<std::string>& trace) : source_{"trace", kind, 1e9, true}, trace_(trace) {}
  const CounterSource& source() const noexcept override { return source_; }
  std::uint64_t read() override {
    trace_.push_back("read");
    return value_ += 10;
  }

 private:
  CounterSource source_;
  std::vector<std::string>& trace_;
  std::uint64_t value_ = 0;
};

class FixedCounter final : public CounterBackend {
 public:
  FixedCounter(std::vector<std::uint64_t> values, unsigned bits)
      : source_{"fixed", SourceKind::gpu, std::nullopt, false}, values_(std::move(values)), bits_(bits) {}
  const CounterSource& source() const noexcept override { return source_; }
  std::uint64_t read() override { return values_.at(next_++); }
  unsigned counter_bits() const noexcept override { return bits_; }

 private:
  CounterSource source_;
  std::vector<std::uint64_t> values_;
  unsigned bits_;
  std::size_t next_ = 0;
};

}  // namespace

TEST_CASE("generic host lists the timer") {
  ProbeRegistry reg;
  const auto sources = reg.list_sources();
  REQUIRE(sources.size() == 1);
  CHECK(sources[0].id == "timer");
  CHECK(sources[0].kind == SourceKind::timer);
  CHECK(sources[0].nominal_frequency == 1e9);
  CHECK(sources[0].monotonic);
}

TEST_CASE("registered fake GPU backend appears after the timer") {
  ProbeRegistry reg;
  reg.register_backend(std::make_unique<ScaledClockCounter>("gpu-fake", SourceKind::gpu, 500e6));
  const auto sources = reg.list_sources();
  REQUIRE(sources.size() == 2);
  CHECK(sources[0].id == "timer");
  CHECK(sources[1].id == "gpu-fake");
  CHECK(reg.first_of(SourceKind::gpu) == &reg.backend("gpu-fake"));
  CHECK(reg.first_of(SourceKind::cpu) == nullptr);
  CHECK_THROWS_AS(reg.register_backend(std::make_unique<ScaledClockCounter>("gpu-fake", SourceKind::gpu, 1.0)),
                  std::invalid_argument);
  reg.unregister("gpu-fake");
  CHECK(reg.list_sources().size() == 1);
}

TEST_CASE("simulated device exposes cpu-sim and gpu-sim only") {
  sim::SimulatedPlatform platform(sim::ideal_device(sim::rpi4_like(), "dc:a6:32:00:00:01"), 0.0);
  const auto sources = platform.probes().list_sources();
  REQUIRE(sources.size() == 2);
  CHECK(sources[0].id == "cpu-sim");
  CHECK(sources[0].kind == SourceKind::cpu);
  CHECK(sources[1].id == "gpu-sim");
  CHECK(sources[1].kind == SourceKind::gpu);
}

TEST_CASE("timer reads are monotone") {
  ProbeRegistry reg;
  const CounterSource timer = reg.list_sources()[0];
  std::uint64_t last = reg.read(timer).value;
  for (int i = 0; i < 10000; ++i) {
    const auto r = reg.read(timer);
    CHECK(r.source_id == "timer");
    CHECK(r.value >= last);
    last = r.value;
  }
}

TEST_CASE("unregistered GPU source is unavailable") {
  ProbeRegistry reg;
  CHECK_THROWS_AS(reg.backend("gpu"), SourceUnavailable);
  CHECK_THROWS_AS(reg.read(CounterSource{"gpu", SourceKind::gpu, 500e6, true}), SourceUnavailable);
  CHECK(reg.find("gpu") == nullptr);
}

TEST_CASE("fake 500 MHz counter over one second of sleep") {
  ScaledClockCounter gpu("gpu-fake", SourceKind::gpu, 500e6);
  const auto m = measure(gpu, Component::cpu, "cpu_sleep", [] { std::this_thread::sleep_for(1s); });
  CHECK(m.delta >= 499000000u);
  CHECK(m.delta <= 501000000u);
  CHECK(m.observer == "gpu-fake");
  CHECK(m.observed == Component::cpu);
  CHECK(m.workload_id == "cpu_sleep");
  CHECK(m.duration_tag == "t_cpu_exec");
}

TEST_CASE("no-op bracket is bounded by the empty-bracket calibration") {
  TimerBackend timer;
  const BracketOverhead o = measure_bracket_overhead(timer, 1000);
  CHECK(o.iterations == 1000);
  CHECK(o.min <= o.mean);
  CHECK(o.mean <= static_cast<double>(o.max));
  const auto m = measure(timer, Component::memory, "noop", [] {});
  CHECK(m.delta > 0u);
  CHECK(m.delta <= 10 * std::max<std::uint64_t>(o.max, 1));
}

TEST_CASE("same-component observer is rejected before execution") {
  int runs = 0;
  ScaledClockCounter cpu("cpu", SourceKind::cpu, 1e9);
  ScaledClockCounter gpu("gpu", SourceKind::gpu, 5e8);
  CHECK_THROWS_AS(measure(cpu, Component::cpu, "cpu_fib", [&] { ++runs; }), std::invalid_argument);
  CHECK_THROWS_AS(measure(gpu, Component::gpu, "gpu_scopy", [&] { ++runs; }), std::invalid_argument);
  CHECK(runs == 0);
  CHECK(may_observe(SourceKind::timer, Component::cpu));
  CHECK(may_observe(SourceKind::gpu, Component::cpu));
  CHECK(may_observe(SourceKind::cpu, Component::storage));
}

TEST_CASE("bracket holds exactly one workload call between two reads") {
  std::vector<std::string> trace;
  TraceCounter counter(SourceKind::cpu, trace);
  const auto m = measure(counter, Component::storage, "storage_read", [&] { trace.push_back("work"); });
  CHECK(trace == std::vector<std::string>{"read", "work", "read"});
  CHECK(m.delta == 10u);
}

TEST_CASE("workload failure propagates and yields no measurement") {
  std::vector<std::string> trace;
  TraceCounter counter(SourceKind::gpu, trace);
  CHECK_THROWS_AS(measure(counter, Component::cpu, "x", [] { throw std::runtime_error("boom"); }),
                  std::runtime_error);
}

TEST_CASE("nested brackets: outer delta >= inner delta") {
  TimerBackend timer;
  for (int i = 0; i < 100; ++i) {
    std::uint64_t inner = 0;
    const auto outer = measure(timer, Component::memory, "outer", [&] {
      inner = measure(timer, Component::memory, "inner", [] {
        volatile int x = 0;
        for (int k = 0; k < 100; ++k) x = x + k;
      }).delta;
    });
    CHECK(outer.delta >= inner);
  }
}

TEST_CASE("counter deltas use modular arithmetic") {
  CHECK(counter_delta(10, 25, 64) == 15u);
  CHECK(counter_delta(0xFFFFFFF0u, 0x10u, 32) == 0x20u);
  CHECK(counter_delta(~std::uint64_t{0}, 4, 64) == 5u);
  CHECK_THROWS_AS(counter_delta(100, 99, 64), MeasurementInvalid);
  CHECK_THROWS_AS(counter_delta(0, 0x80000000u, 32), MeasurementInvalid);
  CHECK(counter_delta(0, 0x7FFFFFFFu, 32) == 0x7FFFFFFFu);
  CHECK_THROWS_AS(counter_delta(0, 1, 0), std::invalid_argument);

  FixedCounter wrapping({0xFFFFFF00u, 0x00000100u}, 32);
  CHECK(measure(wrapping, Component::cpu, "w", [] {}).delta == 0x200u);
  FixedCounter backwards({500, 400}, 64);
  CHECK_THROWS_AS(measure(backwards, Component::cpu, "b", [] {}), MeasurementInvalid);
}

TEST_CASE("calibrate against itself is exactly one") {
  TimerBackend timer;
  CHECK(calibrate(timer, timer, 10ms) == 1.0);
}

TEST_CASE("calibrate a 500 MHz counter against a nanosecond reference") {
  VirtualClock clock;
  VirtualCounter gpu("gpu", SourceKind::gpu, 500e6, clock);
  VirtualCounter ns("ns", SourceKind::timer, 1e9, clock);
  const auto advance = [&](std::chrono::nanoseconds d) { clock.seconds += std::chrono::duration<double>(d).count(); };
  CHECK(calibrate(gpu, ns, 1s, advance) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("calibrate recovers a simulated +100 ppm GPU skew") {
  auto dev = sim::ideal_device(sim::rpi4_like(), "dc:a6:32:00:00:02");
  dev.gpu_skew_ppm = 100.0;
  sim::SimulatedPlatform platform(dev, 0.0);
  const auto advance = [&](std::chrono::nanoseconds d) {
    platform.advance(std::chrono::duration<double>(d).count());
  };
  const double ratio = calibrate(platform.gpu_counter(), platform.cpu_counter(), 1s, advance);
  CHECK(ratio == doctest::Approx(0.5 * 1.0001).epsilon(1e-9));
  CHECK(skew_ppm(ratio, 0.5) == doctest::Approx(100.0).epsilon(1e-4));
}

TEST_CASE("calibration over short and long intervals agrees") {
  ScaledClockCounter gpu("gpu-fake", SourceKind::gpu, 500e6);
  TimerBackend timer;
  const double short_ratio = calibrate(gpu, timer, 100ms);
  const double long_ratio = calibrate(gpu, timer, 1s);
  CHECK(std::abs(skew_ppm(short_ratio, long_ratio)) <= 1000.0);
}
