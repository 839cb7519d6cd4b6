#pragma once

// Machine-readable report files: JSON for metrics and correlations, CSV for
// projections, histograms and confusion matrices.

#include <filesystem>
#include <string>

#include "xcb/analysis.hpp"
#include "xcb/classify.hpp"

namespace xcb {

std::string classification_json(const ClassificationReport& report, std::string_view algorithm);
/// Header row of predicted labels; one row per true label.
std::string confusion_csv(const ClassificationReport& report);

std::string cluster_json(const PcaResult& pca, const ClusterResult& clusters, const PurityResult& purity);
/// label,pc1,...,cluster per row.
std::string projection_csv(const PcaResult& pca, const ClusterResult& clusters);

std::string correlation_json(const CorrelationReport& report, std::string_view mac);
std::string correlation_csv(const CorrelationReport& report);

std::string density_json(const DensitySummary& summary);
/// mac,bin,lower,upper,count with one line per device and bin.
std::string density_csv(const DensitySummary& summary);

/// Writes via a temporary file and rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace xcb
