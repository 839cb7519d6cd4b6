#include "xcb/report.hpp"

#include <fstream>

#include <json.hpp>

namespace xcb {

namespace {

using nlohmann::ordered_json;

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string classification_json(const ClassificationReport& report, std::string_view algorithm) {
  ordered_json j;
  j["algorithm"] = algorithm;
  j["accuracy"] = report.accuracy;
  j["macro"] = {{"precision", report.macro_precision},
                {"recall", report.macro_recall},
                {"f1", report.macro_f1}};
  ordered_json classes = ordered_json::array();
  for (const ClassMetrics& m : report.per_class) {
    ordered_json c{{"label", m.label},   {"precision", m.precision}, {"recall", m.recall},
                   {"f1", m.f1},         {"support", m.support}};
    if (m.absent) c["absent"] = true;
    classes.push_back(std::move(c));
  }
  j["classes"] = std::move(classes);
  return j.dump(2) + "\n";
}

std::string confusion_csv(const ClassificationReport& report) {
  std::string out = "true\\predicted";
  for (const auto& c : report.classes) out += "," + csv_field(c);
  out += "\n";
  for (std::size_t i = 0; i < report.classes.size(); ++i) {
    out += csv_field(report.classes[i]);
    for (const std::size_t v : report.confusion[i]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

std::string cluster_json(const PcaResult& pca, const ClusterResult& clusters, const PurityResult& purity) {
  ordered_json j;
  j["purity"] = purity.purity;
  j["explained_variance_ratio"] = pca.explained_variance_ratio;
  j["iterations"] = clusters.iterations;
  j["wcss"] = clusters.wcss_history;
  ordered_json cs = ordered_json::array();
  for (std::size_t c = 0; c < clusters.sizes.size(); ++c) {
    cs.push_back({{"cluster", c},
                  {"size", clusters.sizes[c]},
                  {"centroid", clusters.centroids[c]},
                  {"majority_label", purity.majority_label[c]},
                  {"majority_count", purity.majority_count[c]}});
  }
  j["clusters"] = std::move(cs);
  return j.dump(2) + "\n";
}

std::string projection_csv(const PcaResult& pca, const ClusterResult& clusters) {
  const FeatureMatrix& p = pca.projected;
  std::string out = "label";
  for (const auto& c : p.columns()) out += "," + c;
  out += ",cluster\n";
  for (std::size_t r = 0; r < p.rows(); ++r) {
    out += csv_field(p.labels()[r]);
    for (const double v : p.row(r)) out += "," + format_number(v);
    out += "," + std::to_string(clusters.assignment[r]) + "\n";
  }
  return out;
}

std::string correlation_json(const CorrelationReport& report, std::string_view mac) {
  ordered_json j;
  j["mac"] = mac;
  ordered_json fs = ordered_json::object();
  for (const auto& f : report.features) fs[f.feature] = f.r ? ordered_json(*f.r) : ordered_json(nullptr);
  j["pearson_vs_temperature"] = std::move(fs);
  return j.dump(2) + "\n";
}

std::string correlation_csv(const CorrelationReport& report) {
  std::string out = "feature,r\n";
  for (const auto& f : report.features) out += f.feature + "," + (f.r ? format_number(*f.r) : "NA") + "\n";
  return out;
}

std::string density_json(const DensitySummary& summary) {
  ordered_json j;
  j["feature"] = summary.feature;
  j["bin_edges"] = summary.bin_edges;
  ordered_json ds = ordered_json::array();
  for (const auto& d : summary.devices)
    ds.push_back({{"mac", d.mac}, {"n", d.n}, {"mean", d.mean}, {"sigma", d.sigma}});
  j["devices"] = std::move(ds);
  return j.dump(2) + "\n";
}

std::string density_csv(const DensitySummary& summary) {
  std::string out = "mac,bin,lower,upper,count\n";
  for (const auto& d : summary.devices) {
    for (std::size_t b = 0; b < d.counts.size(); ++b) {
      out += d.mac + "," + std::to_string(b) + "," + format_number(summary.bin_edges[b]) + "," +
             format_number(summary.bin_edges[b + 1]) + "," + std::to_string(d.counts[b]) + "\n";
    }
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << text;
    if (!f.flush()) throw IoError("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace xcb
