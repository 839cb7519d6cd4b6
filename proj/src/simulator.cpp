#include "xcb/simulator.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace xcb::sim {
using nlohmann::json;

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }

// Uniform in (0, 1) from the top 53 bits.
double unit_open(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) / 9007199254740992.0;
}

bool is_sleep(const FeatureSlot& slot) { return slot.spec->id == "cpu_sleep"; }

double sleep_seconds(const FeatureSlot& slot) {
  return slot.spec->param("d" + std::to_string(slot.repetition + 1));
}

std::map<std::string, double> nominal_table(double hash, double prng, double urandom, double fib,
                                            double matmul, double msum, double scopy, double list,
                                            double reserve, double csv, double read, double write) {
  return {{"cpu_string_hash", hash},  {"cpu_pseudo_random", prng}, {"cpu_urandom", urandom},
          {"cpu_fib", fib},           {"gpu_matrixmul", matmul},   {"gpu_matrixsum", msum},
          {"gpu_scopy", scopy},       {"mem_list_creation", list}, {"mem_reserve", reserve},
          {"mem_csv_read", csv},      {"storage_read", read},      {"storage_write", write}};
}

std::string mac_prefix(const std::string& model_name) {
  return model_name.find('4') != std::string::npos ? "dc:a6:32" : "b8:27:eb";
}

std::string format_mac(const std::string& prefix, std::uint64_t bits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s:%02x:%02x:%02x", prefix.c_str(),
                static_cast<unsigned>((bits >> 16) & 0xff), static_cast<unsigned>((bits >> 8) & 0xff),
                static_cast<unsigned>(bits & 0xff));
  return buf;
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void DeviceModelSpec::validate() const {
  if (model_name.empty()) throw std::invalid_argument("model_name must not be empty");
  if (!(nominal_cpu_freq > 0) || !(nominal_gpu_freq > 0)) {
    throw std::invalid_argument("model " + model_name + ": frequencies must be positive");
  }
  if (!(jitter_sigma >= 0) || !(skew_sigma_ppm >= 0) || !(offset_sigma >= 0)) {
    throw std::invalid_argument("model " + model_name + ": sigmas must be non-negative");
  }
  for (const auto& spec : registry()) {
    if (spec.id == "cpu_sleep") continue;
    const auto it = nominal_ns.find(spec.id);
    if (it == nominal_ns.end() || !(it->second > 0)) {
      throw std::invalid_argument("model " + model_name + ": missing positive nominal for " + spec.id);
    }
  }
  for (const auto& [id, scale] : jitter_scale) {
    if (!(scale >= 0)) throw std::invalid_argument("model " + model_name + ": negative jitter scale");
  }
}

double DeviceModelSpec::jitter_for(const std::string& workload_id) const {
  const auto it = jitter_scale.find(workload_id);
  return jitter_sigma * (it == jitter_scale.end() ? 1.0 : it->second);
}

double DeviceModelSpec::temp_coeff_for(const FeatureSlot& slot) const {
  return is_sleep(slot) ? temp_coeff_sleep : temp_coeff_other;
}

DeviceModelSpec rpi4_like() {
  DeviceModelSpec m;
  m.model_name = "RPi4like";
  m.nominal_cpu_freq = 1.5e9;
  m.nominal_gpu_freq = 500e6;
  m.nominal_ns = nominal_table(2000, 600, 4.5e8, 9000, 4.0e6, 1.5e5, 6.0e4, 8.0e4, 6.0e7, 3.0e6,
                               2.0e6, 6.0e6);
  m.temp_coeff_other = 2e-6;
  m.temp_profile = {50.0, 3.0, 0.5};
  return m;
}

DeviceModelSpec rpi3_like() {
  DeviceModelSpec m;
  m.model_name = "RPi3like";
  m.nominal_cpu_freq = 1.4e9;
  m.nominal_gpu_freq = 400e6;
  m.nominal_ns = nominal_table(5000, 1500, 1.6e9, 22000, 9.0e6, 3.5e5, 1.4e5, 2.2e5, 1.8e8, 8.0e6,
                               3.0e6, 9.0e6);
  m.temp_coeff_other = 5e-4;
  m.temp_profile = {55.0, 3.0, 0.5};
  return m;
}

DeviceModelSpec rpi1_like() {
  DeviceModelSpec m;
  m.model_name = "RPi1like";
  m.nominal_cpu_freq = 700e6;
  m.nominal_gpu_freq = 400e6;
  m.nominal_ns = nominal_table(15000, 4500, 6.0e9, 70000, 2.4e7, 9.0e5, 3.6e5, 6.5e5, 5.0e8, 2.4e7,
                               4.0e6, 1.1e7);
  m.temp_coeff_other = 2e-6;
  m.temp_profile = {42.0, 3.0, 0.5};
  return m;
}

DeviceModelSpec rpi_zero_like() {
  DeviceModelSpec m;
  m.model_name = "RPiZerolike";
  m.nominal_cpu_freq = 1.0e9;
  m.nominal_gpu_freq = 400e6;
  m.nominal_ns = nominal_table(10500, 3150, 4.2e9, 49000, 1.9e7, 7.0e5, 2.8e5, 4.6e5, 3.6e8, 1.7e7,
                               5.0e6, 1.3e7);
  m.temp_coeff_other = 2e-6;
  m.temp_profile = {40.0, 3.0, 0.5};
  return m;
}

DeviceModelSpec builtin_model(std::string_view name) {
  if (name == "RPi4like") return rpi4_like();
  if (name == "RPi3like") return rpi3_like();
  if (name == "RPi1like") return rpi1_like();
  if (name == "RPiZerolike") return rpi_zero_like();
  throw std::invalid_argument("unknown built-in model: " + std::string(name));
}

VirtualDevice ideal_device(const DeviceModelSpec& model, std::string mac, std::uint64_t seed) {
  VirtualDevice d;
  d.mac = std::move(mac);
  d.model = model;
  d.offsets.assign(FeatureSchema::kPerformanceCount, 0.0);
  d.rng_seed = seed;
  return d;
}

void FarmConfig::validate() const {
  if (models.empty()) throw std::invalid_argument("farm needs at least one model");
  for (const auto& e : models) {
    e.model.validate();
    if (e.device_count < 1) throw std::invalid_argument("device_count must be >= 1");
  }
  if (samples_per_device < 1) throw std::invalid_argument("samples_per_device must be >= 1");
  if (!(write_center_ratio > 0)) throw std::invalid_argument("write_center_ratio must be positive");
}

FarmConfig FarmConfig::default_fleet() {
  FarmConfig c;
  c.models = {{rpi4_like(), 15}, {rpi3_like(), 10}, {rpi1_like(), 10}, {rpi_zero_like(), 10}};
  return c;
}

FarmConfig farm_from_json(const std::string& text) {
  const json j = json::parse(text);
  FarmConfig c;
  read_opt(j, "master_seed", c.master_seed);
  read_opt(j, "samples_per_device", c.samples_per_device);
  read_opt(j, "start_time", c.start_time);
  read_opt(j, "bimodal_storage_write", c.bimodal_storage_write);
  read_opt(j, "write_center_ratio", c.write_center_ratio);
  if (!j.contains("models")) {
    c.models = FarmConfig::default_fleet().models;
  } else {
    for (const auto& m : j.at("models")) {
      const auto name = m.at("name").get<std::string>();
      FarmEntry e{builtin_model(m.value("base", name)), m.value("count", std::size_t{1})};
      auto& s = e.model;
      s.model_name = name;
      read_opt(m, "nominal_cpu_freq", s.nominal_cpu_freq);
      read_opt(m, "nominal_gpu_freq", s.nominal_gpu_freq);
      read_opt(m, "skew_sigma_ppm", s.skew_sigma_ppm);
      read_opt(m, "offset_sigma", s.offset_sigma);
      read_opt(m, "jitter_sigma", s.jitter_sigma);
      read_opt(m, "temp_coeff_sleep", s.temp_coeff_sleep);
      read_opt(m, "temp_coeff_other", s.temp_coeff_other);
      if (m.contains("nominal_ns")) {
        for (const auto& [k, v] : m.at("nominal_ns").items()) s.nominal_ns[k] = v.get<double>();
      }
      if (m.contains("jitter_scale")) {
        for (const auto& [k, v] : m.at("jitter_scale").items()) s.jitter_scale[k] = v.get<double>();
      }
      if (m.contains("temp_profile")) {
        const auto& t = m.at("temp_profile");
        read_opt(t, "mean_c", s.temp_profile.mean_c);
        read_opt(t, "daily_amplitude_c", s.temp_profile.daily_amplitude_c);
        read_opt(t, "noise_sigma_c", s.temp_profile.noise_sigma_c);
      }
      c.models.push_back(std::move(e));
    }
  }
  c.validate();
  return c;
}

std::string farm_to_json(const FarmConfig& c) {
  json models = json::array();
  for (const auto& e : c.models) {
    const auto& s = e.model;
    models.push_back({{"name", s.model_name},
                      {"count", e.device_count},
                      {"nominal_cpu_freq", s.nominal_cpu_freq},
                      {"nominal_gpu_freq", s.nominal_gpu_freq},
                      {"nominal_ns", s.nominal_ns},
                      {"skew_sigma_ppm", s.skew_sigma_ppm},
                      {"offset_sigma", s.offset_sigma},
                      {"jitter_sigma", s.jitter_sigma},
                      {"jitter_scale", s.jitter_scale},
                      {"temp_coeff_sleep", s.temp_coeff_sleep},
                      {"temp_coeff_other", s.temp_coeff_other},
                      {"temp_profile",
                       {{"mean_c", s.temp_profile.mean_c},
                        {"daily_amplitude_c", s.temp_profile.daily_amplitude_c},
                        {"noise_sigma_c", s.temp_profile.noise_sigma_c}}}});
  }
  return json{{"master_seed", c.master_seed},
              {"samples_per_device", c.samples_per_device},
              {"start_time", c.start_time},
              {"bimodal_storage_write", c.bimodal_storage_write},
              {"write_center_ratio", c.write_center_ratio},
              {"models", models}}
      .dump(2);
}

std::vector<VirtualDevice> make_farm(const FarmConfig& config) {
  config.validate();
  std::vector<VirtualDevice> farm;
  std::set<std::string> macs;
  std::uint64_t index = 0;
  for (const auto& entry : config.models) {
    for (std::size_t k = 0; k < entry.device_count; ++k, ++index) {
      const std::uint64_t device_seed = mix64(config.master_seed, index);
      std::mt19937_64 rng(device_seed);
      std::normal_distribution<double> normal(0.0, 1.0);

      VirtualDevice d;
      d.model = entry.model;
      d.cpu_skew_ppm = entry.model.skew_sigma_ppm * normal(rng);
      d.gpu_skew_ppm = entry.model.skew_sigma_ppm * normal(rng);
      d.offsets.resize(FeatureSchema::kPerformanceCount);
      for (auto& o : d.offsets) o = entry.model.offset_sigma * normal(rng);
      if (config.bimodal_storage_write && k % 2 == 1) d.write_center = config.write_center_ratio;
      d.rng_seed = mix64(device_seed, 0x5eedULL);

      std::uint64_t bits = mix64(device_seed, 0x3ac);
      do {
        d.mac = format_mac(mac_prefix(entry.model.model_name), bits);
        bits = mix64(bits);
      } while (!macs.insert(d.mac).second);
      farm.push_back(std::move(d));
    }
  }
  return farm;
}

double temperature_at(const TemperatureProfile& p, std::uint64_t seed, double t) {
  const std::uint64_t h = mix64(seed, std::bit_cast<std::uint64_t>(t));
  const double u1 = unit_open(h);
  const double u2 = unit_open(mix64(h));
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return p.mean_c + p.daily_amplitude_c * std::sin(2.0 * std::numbers::pi * t / 86400.0) +
         p.noise_sigma_c * z;
}

double expected_feature(const VirtualDevice& device, const FeatureSlot& slot, double temperature_c) {
  const auto& m = device.model;
  const auto& id = slot.spec->id;
  const double cpu = device.cpu_skew_ppm * 1e-6;
  const double gpu = device.gpu_skew_ppm * 1e-6;
  double base = 0.0;
  double skew = 0.0;
  switch (slot.spec->target) {
    case Component::cpu:
      // CPU work counted in GPU cycles.
      base = is_sleep(slot) ? sleep_seconds(slot) * m.nominal_gpu_freq
                            : m.nominal_ns.at(id) * 1e-9 * m.nominal_gpu_freq;
      skew = gpu - cpu;
      break;
    case Component::gpu:
      base = m.nominal_ns.at(id);
      skew = cpu - gpu;
      break;
    case Component::memory:
    case Component::storage:
      base = m.nominal_ns.at(id);
      if (id == "storage_write") base *= device.write_center;
      skew = cpu;
      break;
  }
  const double offset = device.offsets.at(slot.column - FeatureSchema::kFirstPerformance);
  const double thermal = 1.0 + m.temp_coeff_for(slot) * (temperature_c - m.temp_profile.mean_c);
  return base * (1.0 + skew + offset) * thermal;
}

DeviceSimulator::DeviceSimulator(VirtualDevice device, std::uint64_t stream)
    : device_(std::move(device)), rng_(mix64(device_.rng_seed, stream)) {
  device_.model.validate();
  if (device_.offsets.size() != FeatureSchema::kPerformanceCount) {
    throw std::invalid_argument("device offsets must cover every performance column");
  }
}

double DeviceSimulator::temperature(double t) const {
  return temperature_at(device_.model.temp_profile, device_.rng_seed, t);
}

double DeviceSimulator::simulate_feature(const FeatureSlot& slot, double t) {
  return simulate_at(slot, temperature(t));
}

double DeviceSimulator::simulate_at(const FeatureSlot& slot, double temperature_c) {
  const double expected = expected_feature(device_, slot, temperature_c);
  return expected * (1.0 + device_.model.jitter_for(slot.spec->id) * normal_(rng_));
}

double DeviceSimulator::seconds_for(const FeatureSlot& slot, double value) const {
  const double cpu = 1.0 + device_.cpu_skew_ppm * 1e-6;
  const double gpu = 1.0 + device_.gpu_skew_ppm * 1e-6;
  if (slot.spec->target == Component::cpu) return value / (device_.model.nominal_gpu_freq * gpu);
  return value / (1e9 * cpu);
}

std::pair<SampleVector, double> DeviceSimulator::simulate_sample(double t) {
  SampleVector s;
  s.label = device_.mac;
  s.values.assign(FeatureSchema::standard().value_count(), 0.0);
  const double temp = temperature(t);
  s.values[FeatureSchema::kTimestamp] = t;
  s.values[FeatureSchema::kTemperature] = temp;
  double elapsed = 0.0;
  for (const auto& slot : feature_slots()) {
    const double v = simulate_at(slot, temp);
    s.values[slot.column] = v;
    elapsed += seconds_for(slot, v);
  }
  return {std::move(s), elapsed};
}

double simulate_feature(DeviceSimulator& device, const FeatureSlot& slot, double t) {
  return device.simulate_feature(slot, t);
}

Dataset simulate_dataset(const std::vector<VirtualDevice>& farm, std::size_t samples_per_device,
                         double start_time) {
  if (samples_per_device < 1) throw std::invalid_argument("samples_per_device must be >= 1");
  Dataset ds;
  ds.devices.reserve(farm.size());
  for (const auto& device : farm) {
    DeviceSimulator sim(device);
    DeviceData data;
    data.record = {device.mac, device.model.model_name};
    data.samples.reserve(samples_per_device);
    double t = start_time;
    for (std::size_t i = 0; i < samples_per_device; ++i) {
      auto [sample, elapsed] = sim.simulate_sample(t);
      data.samples.push_back(std::move(sample));
      t += elapsed;
    }
    ds.devices.push_back(std::move(data));
  }
  return ds;
}

Dataset simulate_dataset(const FarmConfig& config) {
  return simulate_dataset(make_farm(config), config.samples_per_device, config.start_time);
}

SimCounter::SimCounter(std::string id, SourceKind kind, double nominal_hz, double effective_hz)
    : source_{std::move(id), kind, nominal_hz, true}, effective_hz_(effective_hz) {}

void SimCounter::advance_seconds(double seconds) noexcept {
  const double ticks = seconds * effective_hz_ + carry_;
  const double whole = std::floor(ticks);
  carry_ = ticks - whole;
  value_ += static_cast<std::uint64_t>(whole);
}

SimulatedPlatform::SimulatedPlatform(VirtualDevice device, double start_time)
    : sim_(std::move(device)), probes_(ProbeRegistry::without_timer()), executor_(*this), now_(start_time) {
  const auto& d = sim_.device();
  auto cpu = std::make_unique<SimCounter>("cpu-sim", SourceKind::cpu, 1e9, 1e9 * (1.0 + d.cpu_skew_ppm * 1e-6));
  auto gpu = std::make_unique<SimCounter>("gpu-sim", SourceKind::gpu, d.model.nominal_gpu_freq,
                                          d.model.nominal_gpu_freq * (1.0 + d.gpu_skew_ppm * 1e-6));
  cpu_ = cpu.get();
  gpu_ = gpu.get();
  probes_.register_backend(std::move(cpu));
  probes_.register_backend(std::move(gpu));
  sample_temperature_ = sim_.temperature(now_);
}

double SimulatedPlatform::read_temperature() {
  sample_temperature_ = sim_.temperature(now_);
  return sample_temperature_;
}

StabilityReport SimulatedPlatform::preflight(const SessionConfig&) {
  return StabilityReport::all_not_applicable("simulated device");
}

void SimulatedPlatform::prepare(const SessionConfig& config) {
  auto device = sim_.device();
  sim_ = DeviceSimulator(std::move(device), mix64(config.seed, std::bit_cast<std::uint64_t>(now_)));
}

void SimulatedPlatform::resume_after(double last_timestamp) {
  if (now_ <= last_timestamp) advance(last_timestamp - now_ + kRestartGapSeconds);
}

void SimulatedPlatform::advance(double seconds) {
  if (seconds <= 0) return;
  cpu_->advance_seconds(seconds);
  gpu_->advance_seconds(seconds);
  now_ += seconds;
}

void SimulatedPlatform::Executor::run(const FeatureSlot& slot) {
  auto& p = owner_;
  const double value = p.sim_.simulate_at(slot, p.sample_temperature_);
  const auto ticks = static_cast<std::uint64_t>(std::llround(value));
  const double seconds = p.sim_.seconds_for(slot, value);
  // The observing counter moves by exactly the simulated value; the other
  // counter and the clock follow in true time.
  if (slot.spec->target == Component::cpu) {
    p.gpu_->advance_ticks(ticks);
    p.cpu_->advance_seconds(seconds);
  } else {
    p.cpu_->advance_ticks(ticks);
    p.gpu_->advance_seconds(seconds);
  }
  p.now_ += seconds;
}

}  // namespace xcb::sim
