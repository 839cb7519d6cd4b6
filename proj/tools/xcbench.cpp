// xcbench: collection, simulation and offline analysis front end.
//
// Exit codes: 0 success, 1 error or refused session, 2 degraded-mode session.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "xcb/analysis.hpp"
#include "xcb/classify.hpp"
#include "xcb/collector.hpp"
#include "xcb/report.hpp"
#include "xcb/schema.hpp"
#include "xcb/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xcb;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// First non-loopback interface address, lower-case.
std::optional<std::string> host_mac() {
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator("/sys/class/net", ec)) {
    if (entry.path().filename() == "lo") continue;
    std::ifstream in(entry.path() / "address");
    std::string mac;
    if (in >> mac && is_valid_mac(mac) && mac != "00:00:00:00:00:00") return mac;
  }
  return std::nullopt;
}

std::string host_model() {
  std::ifstream in("/proc/device-tree/model");
  std::string model;
  if (std::getline(in, model)) {
    std::erase(model, '\0');
    std::erase(model, ',');
    if (!model.empty()) return model;
  }
  return "host";
}

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> samples;
  std::optional<std::size_t> samples_per_device;
  std::optional<std::size_t> k;
  std::string algo = "random_forest";
  std::string feature;
  std::string model;
  std::string mac;
  std::size_t folds = 0;
  bool allow_degraded = false;
  bool verbose = false;
};

int run_collect(const Options& o) {
  const json cfg = json::parse(slurp(o.config));
  const std::string backend = cfg.value("backend", "simulator");

  SessionConfig sc;
  sc.samples_per_session = o.samples.value_or(cfg.value("samples_per_session", std::size_t{800}));
  sc.seed = o.seed.value_or(cfg.value("seed", std::uint64_t{0}));
  sc.working_dir = cfg.value("working_dir", std::string("."));
  if (!o.out.empty()) {
    sc.output_dir = fs::path(o.out);
  } else if (cfg.contains("output_dir")) {
    sc.output_dir = fs::path(cfg.at("output_dir").get<std::string>());
  }
  if (cfg.contains("pinned_core")) sc.pinned_core = cfg.at("pinned_core").get<unsigned>();
  sc.require_fixed_frequency = cfg.value("require_fixed_frequency", false);
  sc.allow_degraded = o.allow_degraded || cfg.value("allow_degraded", false);

  std::unique_ptr<Platform> platform;
  if (backend == "simulator") {
    json farm;
    farm["master_seed"] = cfg.value("device_seed", sc.seed);
    json entry = cfg.value("device", json::object());
    if (!entry.contains("name")) entry["name"] = cfg.value("model", std::string("RPi4like"));
    entry["count"] = 1;
    farm["models"] = json::array({entry});
    auto device = sim::make_farm(sim::farm_from_json(farm.dump())).front();
    if (cfg.contains("mac")) device.mac = cfg.at("mac").get<std::string>();
    sc.device_mac = device.mac;
    sc.device_model = device.model.model_name;
    platform = std::make_unique<sim::SimulatedPlatform>(std::move(device),
                                                        cfg.value("start_time", 1638748800.0));
  } else if (backend == "host") {
    sc.device_mac = cfg.contains("mac") ? cfg.at("mac").get<std::string>() : host_mac().value_or("");
    if (sc.device_mac.empty()) throw std::runtime_error("no MAC address found; set \"mac\" in the config");
    sc.device_model = cfg.value("model", host_model());
    HostPlatformOptions ho;
    ho.sleep_scale = cfg.value("sleep_scale", 1.0);
    platform = std::make_unique<HostPlatform>(std::move(ho));
  } else {
    throw std::runtime_error("unknown backend: " + backend);
  }
  sc.validate();

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  SessionHooks hooks;
  hooks.stop = &g_stop;
  if (o.verbose) {
    hooks.after_row = [](std::size_t n) { std::cerr << "row " << n << "\n"; };
  }
  const SessionLog log = run_session(sc, *platform, hooks);

  std::cout << "session " << to_string(log.outcome) << ": " << log.rows_appended << " rows for "
            << log.mac << " in " << (sc.dataset_dir() / (log.mac + ".csv")).string() << "\n";
  if (log.degraded) std::cout << "degraded: stability measures missing\n";
  for (const auto& c : log.stability.checks) {
    if (c.status != CheckStatus::satisfied && c.status != CheckStatus::not_applicable)
      std::cout << "  " << to_string(c.check) << ": " << to_string(c.status) << " " << c.detail << "\n";
  }
  for (const auto& r : log.abort_reasons) std::cerr << "error: " << r << "\n";
  return exit_code(log);
}

int run_simulate(const Options& o) {
  if (o.out.empty()) throw std::runtime_error("--out is required");
  sim::FarmConfig farm = o.config.empty() ? sim::FarmConfig::default_fleet() : sim::farm_from_json(slurp(o.config));
  if (o.seed) farm.master_seed = *o.seed;
  if (o.samples_per_device) farm.samples_per_device = *o.samples_per_device;
  if (o.samples) farm.samples_per_device = *o.samples;
  farm.validate();
  const Dataset ds = sim::simulate_dataset(farm);
  write_dataset(ds, o.out);
  write_text_file(fs::path(o.out) / "farm.json", sim::farm_to_json(farm) + "\n");
  std::cout << "wrote " << ds.devices.size() << " devices, " << ds.sample_count() << " samples to "
            << o.out << "\n";
  return 0;
}

Dataset load(const Options& o) {
  if (o.data.empty()) throw std::runtime_error("--data is required");
  return read_dataset(o.data);
}

fs::path out_dir(const Options& o) { return o.out.empty() ? fs::path(".") : fs::path(o.out); }

int run_cluster(const Options& o) {
  const Dataset ds = load(o);
  const FeatureMatrix m = build_matrix(ds, MatrixOptions::clustering());
  const auto [normed, params] = minmax_fit_transform(m);
  const PcaResult p = pca(normed, 2);
  const ClusterResult c = kmeans(p.projected, o.k.value_or(4), o.seed.value_or(0));
  const PurityResult purity = cluster_purity(c, p.projected.labels());
  write_text_file(out_dir(o) / "cluster.json", cluster_json(p, c, purity));
  write_text_file(out_dir(o) / "projection.csv", projection_csv(p, c));
  std::cout << "purity " << format_number(purity.purity) << "\n";
  for (std::size_t i = 0; i < c.sizes.size(); ++i)
    std::cout << "cluster " << i << ": " << c.sizes[i] << " rows, majority " << purity.majority_label[i] << "\n";
  return 0;
}

int run_identify(const Options& o) {
  const Dataset ds = load(o);
  const ClassifierKind kind = classifier_kind(o.algo);
  const FeatureMatrix m = build_matrix(ds, MatrixOptions::identification());
  const std::uint64_t seed = o.seed.value_or(0);
  const SplitResult s = split(m, 0.8, seed, true);
  Hyperparams hp;
  hp.seed = seed;
  if (o.k) hp.k = *o.k;
  const auto model = train_classifier(kind, s.train, hp);
  const ClassificationReport rep = evaluate(*model, s.test);

  std::string text = classification_json(rep, to_string(kind));
  if (o.folds > 0) {
    auto j = nlohmann::ordered_json::parse(text);
    j["cross_validation_macro_f1"] = cross_validate(kind, s.train, hp, o.folds, seed);
    text = j.dump(2) + "\n";
  }
  const std::string name(to_string(kind));
  write_text_file(out_dir(o) / ("identify_" + name + ".json"), text);
  write_text_file(out_dir(o) / ("confusion_" + name + ".csv"), confusion_csv(rep));
  std::cout << name << " macro precision " << format_number(rep.macro_precision) << " recall "
            << format_number(rep.macro_recall) << " f1 " << format_number(rep.macro_f1) << "\n";
  return 0;
}

int run_correlate(const Options& o) {
  const Dataset ds = load(o);
  std::size_t done = 0;
  for (const DeviceData& d : ds.devices) {
    if (!o.mac.empty() && d.record.mac != o.mac) continue;
    if (!o.model.empty() && d.record.model != o.model) continue;
    Dataset one;
    one.devices.push_back(d);
    MatrixOptions mo{LabelKind::mac, true, false};
    const CorrelationReport rep = correlation_report(build_matrix(one, mo));
    std::string stem = "correlation_" + d.record.mac;
    std::replace(stem.begin(), stem.end(), ':', '-');
    write_text_file(out_dir(o) / (stem + ".json"), correlation_json(rep, d.record.mac));
    write_text_file(out_dir(o) / (stem + ".csv"), correlation_csv(rep));
    ++done;
  }
  if (done == 0) throw std::runtime_error("no device matches the selection");
  std::cout << "wrote correlation reports for " << done << " devices\n";
  return 0;
}

int run_density(const Options& o) {
  if (o.feature.empty()) throw std::runtime_error("--feature is required");
  const Dataset ds = load(o);
  const DensitySummary s = density_summary(ds, o.feature, o.model);
  std::string stem = "density_" + o.feature + (o.model.empty() ? "" : "_" + o.model);
  write_text_file(out_dir(o) / (stem + ".csv"), density_csv(s));
  write_text_file(out_dir(o) / (stem + ".json"), density_json(s));
  std::cout << "wrote " << s.devices.size() << " device histograms for " << o.feature << "\n";
  return 0;
}

int run_inspect(const Options& o) {
  const Dataset ds = load(o);
  std::map<std::string, std::pair<std::size_t, std::size_t>> by_model;
  for (const auto& d : ds.devices) {
    auto& [devices, samples] = by_model[d.record.model];
    ++devices;
    samples += d.samples.size();
    if (o.verbose) std::cout << d.record.mac << "," << d.record.model << "," << d.samples.size() << "\n";
  }
  std::cout << "devices " << ds.devices.size() << ", samples " << ds.sample_count() << ", columns "
            << FeatureSchema::kColumnCount << "\n";
  for (const auto& [model, counts] : by_model)
    std::cout << "  " << model << ": " << counts.first << " devices, " << counts.second << " samples\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-component hardware benchmarking and device fingerprinting"};
  app.require_subcommand(1, 1);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Seed for all randomness");
    sub->add_flag("-v,--verbose", o.verbose, "Verbose output");
  };
  const auto analysis = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  };

  auto* collect = app.add_subcommand("collect", "Run one measurement session");
  common(collect);
  collect->add_option("--config", o.config, "Session config JSON")->required();
  collect->add_option("--samples", o.samples, "Samples in this session")->check(CLI::PositiveNumber);
  collect->add_flag("--allow-degraded", o.allow_degraded, "Run without stability measures");

  auto* simulate = app.add_subcommand("simulate", "Generate a simulated fleet dataset");
  common(simulate);
  simulate->add_option("--config", o.config, "Farm config JSON");
  simulate->add_option("--samples-per-device,--samples", o.samples_per_device, "Samples per device");

  auto* cluster = app.add_subcommand("cluster", "PCA + k-means model clustering");
  analysis(cluster);
  cluster->add_option("--k", o.k, "Number of clusters");

  auto* identify = app.add_subcommand("identify", "Individual device identification");
  analysis(identify);
  identify->add_option("--algo", o.algo, "knn, decision_tree or random_forest");
  identify->add_option("--k", o.k, "kNN neighbours");
  identify->add_option("--folds", o.folds, "Cross-validation folds over the training split");

  auto* correlate = app.add_subcommand("correlate", "Temperature correlation per device");
  analysis(correlate);
  correlate->add_option("--mac", o.mac, "Only this device");
  correlate->add_option("--model", o.model, "Only devices of this model");

  auto* density = app.add_subcommand("density", "Per-device feature histograms");
  analysis(density);
  density->add_option("--feature", o.feature, "Feature column")->required();
  density->add_option("--model", o.model, "Only devices of this model");

  auto* inspect = app.add_subcommand("inspect", "Summarise a dataset directory");
  analysis(inspect);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (o.samples_per_device && *o.samples_per_device == 0)
      throw std::invalid_argument("--samples-per-device must be positive");
    if (*collect) return run_collect(o);
    if (*simulate) return run_simulate(o);
    if (*cluster) return run_cluster(o);
    if (*identify) return run_identify(o);
    if (*correlate) return run_correlate(o);
    if (*density) return run_density(o);
    if (*inspect) return run_inspect(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
