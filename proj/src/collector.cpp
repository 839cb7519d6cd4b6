#include "xcb/collector.hpp"

#include <fcntl.h>
#include <sched.h>
#include <sys/resource.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace xcb {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim_copy(std::string s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.back())) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && is_space(s[i])) ++i;
  return s.substr(i);
}

[[noreturn]] void throw_errno(const std::string& what) {
  throw IoError(what + ": " + std::strerror(errno));
}

void write_all(int fd, std::string_view data, const fs::path& path) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("write " + path.string());
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void write_file_atomically(const fs::path& path, const std::string& content) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void register_device_model(const fs::path& dir, const std::string& mac, const std::string& model) {
  std::vector<DeviceRecord> devices;
  if (fs::exists(dir / "MAC-Model.txt")) devices = read_device_models(dir);
  for (const auto& d : devices) {
    if (d.mac == mac) {
      if (d.model != model) {
        throw SchemaError("MAC " + mac + " is already registered as model " + d.model);
      }
      return;
    }
  }
  devices.push_back({mac, model});
  std::string content;
  for (const auto& d : devices) content += d.mac + "," + d.model + "\n";
  write_file_atomically(dir / "MAC-Model.txt", content);
}

// Sidecar metadata shared by all sessions of one device.
void update_sidecar(const fs::path& path, const SessionLog& log) {
  json meta = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    meta = json::parse(in, nullptr, false);
    if (meta.is_discarded()) throw SchemaError("corrupt metadata file " + path.string());
    if (meta.contains("gpu_surrogate") && meta["gpu_surrogate"].get<bool>() != log.gpu_surrogate) {
      throw SchemaError("refusing to mix GPU-surrogate and hardware-GPU samples in " +
                        path.string());
    }
    if (meta.contains("simulated") && meta["simulated"].get<bool>() != log.simulated) {
      throw SchemaError("refusing to mix simulated and real samples in " + path.string());
    }
  }
  meta["mac"] = log.mac;
  meta["model"] = log.model;
  meta["simulated"] = log.simulated;
  meta["gpu_surrogate"] = log.gpu_surrogate;
  meta["hash_function"] = kHashFunctionId;
  meta["degraded"] = meta.value("degraded", false) || log.degraded;
  meta["sessions"] = meta.value("sessions", 0) + 1;
  write_file_atomically(path, meta.dump(2) + "\n");
}

json to_json(const StabilityReport& report) {
  json j = json::object();
  for (const auto& c : report.checks) {
    j[std::string(to_string(c.check))] = {{"status", to_string(c.status)}, {"detail", c.detail}};
  }
  return j;
}

}  // namespace

void SessionConfig::validate() const {
  if (samples_per_session < 1) throw std::invalid_argument("samples_per_session must be >= 1");
  if (!is_valid_mac(device_mac)) throw std::invalid_argument("malformed device_mac: '" + device_mac + "'");
  if (device_model.empty()) throw std::invalid_argument("device_model must not be empty");
}

std::string_view to_string(CheckStatus s) noexcept {
  switch (s) {
    case CheckStatus::satisfied: return "satisfied";
    case CheckStatus::unsatisfied: return "unsatisfied";
    case CheckStatus::not_applicable: return "not-applicable";
    case CheckStatus::unknown: return "unknown";
  }
  return "?";
}

std::string_view to_string(StabilityCheck c) noexcept {
  switch (c) {
    case StabilityCheck::fixed_frequency: return "fixed_frequency";
    case StabilityCheck::elevated_priority: return "elevated_priority";
    case StabilityCheck::aslr_disabled: return "aslr_disabled";
    case StabilityCheck::core_isolation: return "core_isolation";
    case StabilityCheck::hash_seed_fixed: return "hash_seed_fixed";
    case StabilityCheck::background_compaction_disabled: return "background_compaction_disabled";
  }
  return "?";
}

StabilityReport::StabilityReport() {
  for (std::size_t i = 0; i < checks.size(); ++i) {
    checks[i].check = static_cast<StabilityCheck>(i);
  }
}

bool StabilityReport::degraded() const noexcept {
  return std::any_of(checks.begin(), checks.end(), [](const CheckResult& c) {
    return c.status == CheckStatus::unsatisfied || c.status == CheckStatus::unknown;
  });
}

StabilityReport StabilityReport::all_not_applicable(const std::string& detail) {
  StabilityReport r;
  for (auto& c : r.checks) {
    c.status = CheckStatus::not_applicable;
    c.detail = detail;
  }
  return r;
}

std::optional<std::string> HostSystemView::read_file(const fs::path& path) const {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::optional<int> HostSystemView::nice_value() const {
  errno = 0;
  const int prio = ::getpriority(PRIO_PROCESS, 0);
  if (errno != 0) return std::nullopt;
  return prio;
}

std::optional<bool> HostSystemView::realtime_policy() const {
  const int policy = ::sched_getscheduler(0);
  if (policy < 0) return std::nullopt;
  return policy == SCHED_FIFO || policy == SCHED_RR;
}

std::optional<std::vector<unsigned>> HostSystemView::affinity() const {
  cpu_set_t set;
  CPU_ZERO(&set);
  if (::sched_getaffinity(0, sizeof(set), &set) != 0) return std::nullopt;
  std::vector<unsigned> cpus;
  for (unsigned i = 0; i < CPU_SETSIZE; ++i) {
    if (CPU_ISSET(i, &set)) cpus.push_back(i);
  }
  return cpus;
}

std::vector<fs::path> HostSystemView::list_dir(const fs::path& dir) const {
  std::vector<fs::path> out;
  std::error_code ec;
  for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    out.push_back(it->path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<unsigned> parse_cpu_list(std::string_view text) {
  std::vector<unsigned> cpus;
  std::string s = trim_copy(std::string(text));
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim_copy(part);
    if (part.empty()) continue;
    const auto dash = part.find('-');
    try {
      if (dash == std::string::npos) {
        cpus.push_back(static_cast<unsigned>(std::stoul(part)));
      } else {
        const auto lo = static_cast<unsigned>(std::stoul(part.substr(0, dash)));
        const auto hi = static_cast<unsigned>(std::stoul(part.substr(dash + 1)));
        if (hi < lo) throw std::invalid_argument("reversed range");
        for (unsigned c = lo; c <= hi; ++c) cpus.push_back(c);
      }
    } catch (const std::exception&) {
      throw std::invalid_argument("malformed cpu list: '" + std::string(text) + "'");
    }
  }
  return cpus;
}

StabilityReport preflight(const SessionConfig& config, const SystemView& system) {
  StabilityReport r;

  {
    auto& c = r[StabilityCheck::fixed_frequency];
    std::vector<std::string> governors;
    for (const auto& cpu : system.list_dir("/sys/devices/system/cpu")) {
      const auto name = cpu.filename().string();
      if (name.rfind("cpu", 0) != 0 || name.size() < 4 || !std::isdigit(static_cast<unsigned char>(name[3]))) {
        continue;
      }
      if (auto g = system.read_file(cpu / "cpufreq" / "scaling_governor")) governors.push_back(trim_copy(*g));
    }
    if (governors.empty()) {
      c.status = CheckStatus::unknown;
      c.detail = "no cpufreq governor interface";
    } else if (std::all_of(governors.begin(), governors.end(),
                           [](const std::string& g) { return g == "performance"; })) {
      c.status = CheckStatus::satisfied;
      c.detail = "all governors 'performance'";
    } else {
      c.status = CheckStatus::unsatisfied;
      c.detail = "governor not 'performance' on every CPU";
    }
  }

  {
    auto& c = r[StabilityCheck::elevated_priority];
    const auto rt = system.realtime_policy();
    const auto nice = system.nice_value();
    if (rt && *rt) {
      c.status = CheckStatus::satisfied;
      c.detail = "real-time scheduling policy";
    } else if (nice && *nice < 0) {
      c.status = CheckStatus::satisfied;
      c.detail = "nice " + std::to_string(*nice);
    } else if (nice) {
      c.status = CheckStatus::unsatisfied;
      c.detail = "nice " + std::to_string(*nice);
    } else {
      c.status = CheckStatus::unknown;
      c.detail = "priority not readable";
    }
  }

  {
    auto& c = r[StabilityCheck::aslr_disabled];
    if (auto v = system.read_file("/proc/sys/kernel/randomize_va_space")) {
      const auto value = trim_copy(*v);
      c.status = value == "0" ? CheckStatus::satisfied : CheckStatus::unsatisfied;
      c.detail = "randomize_va_space=" + value;
    } else {
      c.status = CheckStatus::unknown;
      c.detail = "randomize_va_space not readable";
    }
  }

  {
    auto& c = r[StabilityCheck::core_isolation];
    const auto online = system.read_file("/sys/devices/system/cpu/online");
    const auto isolated = system.read_file("/sys/devices/system/cpu/isolated");
    if (online && parse_cpu_list(*online).size() == 1) {
      c.status = CheckStatus::not_applicable;
      c.detail = "single-core system";
    } else if (!isolated) {
      c.status = CheckStatus::unknown;
      c.detail = "isolated cpu list not readable";
    } else {
      const auto iso = parse_cpu_list(*isolated);
      if (!config.pinned_core) {
        c.status = CheckStatus::unsatisfied;
        c.detail = "no pinned core configured";
      } else if (std::find(iso.begin(), iso.end(), *config.pinned_core) == iso.end()) {
        c.status = CheckStatus::unsatisfied;
        c.detail = "core " + std::to_string(*config.pinned_core) + " is not isolated";
      } else {
        c.status = CheckStatus::satisfied;
        c.detail = "pinned to isolated core " + std::to_string(*config.pinned_core);
      }
    }
  }

  {
    auto& c = r[StabilityCheck::hash_seed_fixed];
    c.status = CheckStatus::satisfied;
    c.detail = std::string(kHashFunctionId) + " seeded with session seed " + std::to_string(config.seed);
  }

  {
    auto& c = r[StabilityCheck::background_compaction_disabled];
    if (auto v = system.read_file("/proc/sys/vm/compaction_proactiveness")) {
      const auto value = trim_copy(*v);
      c.status = value == "0" ? CheckStatus::satisfied : CheckStatus::unsatisfied;
      c.detail = "compaction_proactiveness=" + value;
    } else {
      c.status = CheckStatus::unknown;
      c.detail = "compaction_proactiveness not readable";
    }
  }
  return r;
}

double read_host_temperature(const SystemView& system, const fs::path& thermal_root) {
  for (const auto& zone : system.list_dir(thermal_root)) {
    if (zone.filename().string().rfind("thermal_zone", 0) != 0) continue;
    const auto text = system.read_file(zone / "temp");
    if (!text) continue;
    try {
      return std::stod(trim_copy(*text)) / 1000.0;
    } catch (const std::exception&) {
      continue;
    }
  }
  return kNoTemperature;
}

HostPlatform::HostPlatform(HostPlatformOptions options) : options_(std::move(options)) {}
HostPlatform::~HostPlatform() = default;

WorkloadExecutor& HostPlatform::workloads() {
  if (!workloads_) throw std::logic_error("host platform used before prepare()");
  return *workloads_;
}

double HostPlatform::read_temperature() { return read_host_temperature(system_); }

double HostPlatform::unix_time() {
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  return std::chrono::duration<double>(now).count();
}

StabilityReport HostPlatform::preflight(const SessionConfig& config) {
  return xcb::preflight(config, system_);
}

void HostPlatform::prepare(const SessionConfig& config) {
  if (config.pinned_core) {
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(*config.pinned_core, &set);
    if (::sched_setaffinity(0, sizeof(set), &set) != 0) {
      throw_errno("cannot pin to core " + std::to_string(*config.pinned_core));
    }
  }
  workloads_ = std::make_unique<HostWorkloads>(
      HostWorkloadOptions{config.scratch_dir(), config.seed, options_.sleep_scale}, std::move(options_.gpu));
  workloads_->prepare();
}

Observers choose_observers(const ProbeRegistry& probes) {
  Observers o;
  CounterBackend* timer = probes.first_of(SourceKind::timer);
  o.cpu_work = probes.first_of(SourceKind::gpu);
  if (!o.cpu_work) o.cpu_work = timer;
  o.other_work = probes.first_of(SourceKind::cpu);
  if (!o.other_work) o.other_work = timer;
  if (!o.cpu_work || !o.other_work) {
    throw SourceUnavailable("no counter source available to observe workloads");
  }
  return o;
}

SampleVector collect_sample(const SessionConfig& config, Platform& platform, const Observers& observers) {
  SampleVector sample;
  sample.label = config.device_mac;
  sample.values.assign(FeatureSchema::standard().value_count(), 0.0);
  sample.values[FeatureSchema::kTimestamp] = platform.unix_time();
  sample.values[FeatureSchema::kTemperature] = platform.read_temperature();

  auto& executor = platform.workloads();
  for (const auto& slot : feature_slots()) {
    const Component target = slot.spec->target;
    auto& observer = observers.for_component(target);
    executor.stage(slot);
    const auto m = measure(observer, target, slot.spec->id, [&] { executor.run(slot); });
    if (m.delta == 0) {
      throw MeasurementInvalid("zero delta for " + FeatureSchema::standard().name(slot.column));
    }
    sample.values[slot.column] = static_cast<double>(m.delta);
  }
  validate_sample(sample, "collected sample");
  return sample;
}

std::string_view to_string(SessionOutcome o) noexcept {
  switch (o) {
    case SessionOutcome::completed: return "completed";
    case SessionOutcome::degraded: return "degraded";
    case SessionOutcome::refused: return "refused";
    case SessionOutcome::interrupted: return "interrupted";
    case SessionOutcome::aborted: return "aborted";
  }
  return "?";
}

std::string SessionLog::to_jsonl() const {
  std::string out;
  json head = {{"type", "session_start"},
               {"mac", mac},
               {"model", model},
               {"start_time", start_time},
               {"simulated", simulated},
               {"degraded", degraded},
               {"gpu_surrogate", gpu_surrogate},
               {"temperature_available", temperature_available},
               {"hash_function", kHashFunctionId},
               {"stability", to_json(stability)}};
  json overhead = json::object();
  for (const auto& [id, o] : bracket_overhead) {
    overhead[id] = {{"min", o.min}, {"max", o.max}, {"mean", o.mean}, {"iterations", o.iterations}};
  }
  head["bracket_overhead"] = overhead;
  out += head.dump() + "\n";
  for (const auto& s : samples) {
    json line = {{"type", "sample"},
                 {"index", s.index},
                 {"status", s.status == SampleStatus::ok ? "ok" : "failed"},
                 {"timestamp", s.timestamp}};
    if (!s.error.empty()) line["error"] = s.error;
    out += line.dump() + "\n";
  }
  json tail = {{"type", "session_end"},
               {"end_time", end_time},
               {"outcome", to_string(outcome)},
               {"rows_appended", rows_appended},
               {"abort_reasons", abort_reasons}};
  out += tail.dump() + "\n";
  return out;
}

std::optional<double> repair_device_csv(const fs::path& file) {
  if (!fs::exists(file)) return std::nullopt;
  std::string content;
  {
    std::ifstream in(file, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    content = ss.str();
  }
  const auto last_newline = content.rfind('\n');
  const std::size_t keep = last_newline == std::string::npos ? 0 : last_newline + 1;
  if (keep != content.size()) {
    fs::resize_file(file, keep);
    content.resize(keep);
  }
  if (content.empty()) return std::nullopt;
  const auto prev = content.rfind('\n', content.size() - 2);
  const std::string_view last_line =
      std::string_view(content).substr(prev == std::string::npos ? 0 : prev + 1);
  if (last_line.rfind("timestamp", 0) == 0) return std::nullopt;
  const auto sample = parse_row(last_line.substr(0, last_line.size() - 1), file.string() + ", last row");
  return sample.timestamp();
}

SessionLog run_session(const SessionConfig& config, Platform& platform, const SessionHooks& hooks) {
  config.validate();
  SessionLog log;
  log.mac = config.device_mac;
  log.model = config.device_model;
  log.simulated = platform.simulated();
  log.stability = platform.preflight(config);
  log.degraded = log.stability.degraded();
  log.start_time = platform.unix_time();

  const fs::path dir = config.dataset_dir();
  fs::create_directories(dir);
  const fs::path csv = dir / (config.device_mac + ".csv");
  const fs::path log_path = dir / (config.device_mac + ".session.jsonl");

  const auto finish = [&](SessionOutcome outcome) {
    log.outcome = outcome;
    log.end_time = platform.unix_time();
    std::ofstream out(log_path, std::ios::binary | std::ios::app);
    out << log.to_jsonl();
    return log;
  };

  if (log.degraded && !config.allow_degraded) {
    log.abort_reasons.push_back("stability measures missing and allow_degraded is false");
    return finish(SessionOutcome::refused);
  }
  const auto freq = log.stability[StabilityCheck::fixed_frequency].status;
  if (config.require_fixed_frequency && freq != CheckStatus::satisfied &&
      freq != CheckStatus::not_applicable) {
    log.abort_reasons.push_back("fixed frequency required but not detected");
    return finish(SessionOutcome::refused);
  }

  int fd = -1;
  try {
    platform.prepare(config);
    log.gpu_surrogate = platform.workloads().gpu_surrogate();
    const Observers observers = choose_observers(platform.probes());
    for (auto* o : {observers.cpu_work, observers.other_work}) {
      if (!log.bracket_overhead.count(o->source().id)) {
        log.bracket_overhead[o->source().id] = measure_bracket_overhead(*o);
      }
    }
    if (const auto last = repair_device_csv(csv)) platform.resume_after(*last);
    register_device_model(dir, config.device_mac, config.device_model);
    update_sidecar(dir / (config.device_mac + ".meta.json"), log);

    const bool fresh = !fs::exists(csv) || fs::file_size(csv) == 0;
    fd = ::open(csv.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw_errno("cannot open " + csv.string());
    if (fresh) write_all(fd, format_header() + "\n", csv);

    std::size_t failures = 0;
    std::size_t attempt = 0;
    while (log.rows_appended < config.samples_per_session) {
      if (hooks.stop && hooks.stop->load()) {
        log.abort_reasons.push_back("interrupted after " + std::to_string(log.rows_appended) + " rows");
        ::close(fd);
        return finish(SessionOutcome::interrupted);
      }
      SampleRecord rec;
      rec.index = attempt++;
      std::string row;
      try {
        const auto sample = collect_sample(config, platform, observers);
        rec.timestamp = sample.timestamp();
        if (sample.temperature() == kNoTemperature) log.temperature_available = false;
        row = format_row(sample) + "\n";
      } catch (const std::exception& e) {
        rec.status = SampleStatus::failed;
        rec.error = e.what();
        log.samples.push_back(rec);
        if (++failures >= hooks.max_consecutive_failures) {
          log.abort_reasons.push_back("too many consecutive sample failures: " + rec.error);
          ::close(fd);
          return finish(SessionOutcome::aborted);
        }
        continue;
      }
      failures = 0;
      write_all(fd, row, csv);  // one write per row keeps rows atomic
      ++log.rows_appended;
      log.samples.push_back(rec);
      if (hooks.after_row) hooks.after_row(log.rows_appended);
    }
    ::close(fd);
  } catch (const std::exception& e) {
    if (fd >= 0) ::close(fd);
    log.abort_reasons.push_back(e.what());
    return finish(SessionOutcome::aborted);
  }
  return finish(log.degraded ? SessionOutcome::degraded : SessionOutcome::completed);
}

int exit_code(const SessionLog& log) {
  switch (log.outcome) {
    case SessionOutcome::completed: return 0;
    case SessionOutcome::degraded: return 2;
    default: return 1;
  }
}

}  // namespace xcb
