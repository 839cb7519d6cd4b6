#include "xcb/probes.hpp"

#include <algorithm>
#include <limits>
#include <thread>

namespace xcb {

TimerBackend::TimerBackend()
    : source_{std::string(ProbeRegistry::kTimerId), SourceKind::timer, 1e9, true},
      origin_(std::chrono::steady_clock::now()) {}

std::uint64_t TimerBackend::read() {
  const auto now = std::chrono::steady_clock::now();
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(now - origin_).count());
}

ProbeRegistry::ProbeRegistry() { backends_.push_back(std::make_unique<TimerBackend>()); }

ProbeRegistry ProbeRegistry::without_timer() {
  ProbeRegistry r;
  r.backends_.clear();
  return r;
}

CounterBackend& ProbeRegistry::register_backend(std::unique_ptr<CounterBackend> backend) {
  if (!backend) throw std::invalid_argument("null counter backend");
  if (find(backend->source().id)) {
    throw std::invalid_argument("counter source already registered: " + backend->source().id);
  }
  backends_.push_back(std::move(backend));
  return *backends_.back();
}

void ProbeRegistry::unregister(std::string_view id) {
  std::erase_if(backends_, [&](const auto& b) { return b->source().id == id; });
}

std::vector<CounterSource> ProbeRegistry::list_sources() const {
  std::vector<CounterSource> out;
  out.reserve(backends_.size());
  for (const auto& b : backends_) out.push_back(b->source());
  return out;
}

CounterBackend* ProbeRegistry::find(std::string_view id) const noexcept {
  for (const auto& b : backends_) {
    if (b->source().id == id) return b.get();
  }
  return nullptr;
}

CounterBackend& ProbeRegistry::backend(std::string_view id) const {
  if (auto* b = find(id)) return *b;
  throw SourceUnavailable("counter source not registered: " + std::string(id));
}

CounterBackend* ProbeRegistry::first_of(SourceKind kind) const noexcept {
  for (const auto& b : backends_) {
    if (b->source().kind == kind) return b.get();
  }
  return nullptr;
}

CounterReading ProbeRegistry::read(const CounterSource& source) const {
  return CounterReading{source.id, backend(source.id).read()};
}

std::uint64_t counter_delta(std::uint64_t before, std::uint64_t after, unsigned bits) {
  if (bits == 0 || bits > 64) throw std::invalid_argument("counter width must be 1..64 bits");
  const std::uint64_t mask = bits == 64 ? std::numeric_limits<std::uint64_t>::max()
                                        : (std::uint64_t{1} << bits) - 1;
  const std::uint64_t delta = (after - before) & mask;
  const std::uint64_t half = bits == 64 ? (std::uint64_t{1} << 63) : (std::uint64_t{1} << (bits - 1));
  if (delta >= half) {
    throw MeasurementInvalid("counter moved backwards or wrapped more than once (raw " +
                             std::to_string(before) + " -> " + std::to_string(after) + ")");
  }
  return delta;
}

BracketOverhead measure_bracket_overhead(CounterBackend& source, std::size_t iterations) {
  if (iterations == 0) throw std::invalid_argument("bracket calibration needs iterations > 0");
  const unsigned bits = source.counter_bits();
  BracketOverhead o;
  o.iterations = iterations;
  o.min = std::numeric_limits<std::uint64_t>::max();
  double sum = 0.0;
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto before = source.read();
    const auto after = source.read();
    const auto d = counter_delta(before, after, bits);
    o.min = std::min(o.min, d);
    o.max = std::max(o.max, d);
    sum += static_cast<double>(d);
  }
  o.mean = sum / static_cast<double>(iterations);
  return o;
}

void real_sleep(std::chrono::nanoseconds d) { std::this_thread::sleep_for(d); }

double calibrate(CounterBackend& source, CounterBackend& reference, std::chrono::nanoseconds interval,
                 const Sleeper& sleep) {
  if (&source == &reference || source.source().id == reference.source().id) return 1.0;
  const auto s0 = source.read();
  const auto r0 = reference.read();
  sleep(interval);
  const auto s1 = source.read();
  const auto r1 = reference.read();
  const auto ds = counter_delta(s0, s1, source.counter_bits());
  const auto dr = counter_delta(r0, r1, reference.counter_bits());
  if (dr == 0) throw MeasurementInvalid("reference counter did not advance during calibration");
  return static_cast<double>(ds) / static_cast<double>(dr);
}

double skew_ppm(double measured_ratio, double nominal_ratio) {
  return (measured_ratio / nominal_ratio - 1.0) * 1e6;
}

}  // namespace xcb
