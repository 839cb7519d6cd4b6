#pragma once

// Supervised identification: kNN, CART decision trees and random forests,
// stratified splits, k-fold cross-validation and per-class metrics.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xcb/analysis.hpp"

namespace xcb {

enum class ClassifierKind { knn, decision_tree, random_forest };
std::string_view to_string(ClassifierKind k) noexcept;
/// Throws AnalysisError for unknown names.
ClassifierKind classifier_kind(std::string_view name);

struct Hyperparams {
  std::size_t k = 7;                          // kNN neighbours
  std::size_t n_estimators = 100;             // forest size
  std::optional<std::size_t> max_depth;       // unlimited when empty
  std::optional<std::size_t> max_features;    // per split; forest default sqrt(p), tree default p
  std::size_t min_samples_split = 2;
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

class ClassifierModel {
 public:
  virtual ~ClassifierModel() = default;
  virtual ClassifierKind kind() const noexcept = 0;
  /// Sorted distinct training labels.
  const std::vector<std::string>& classes() const noexcept { return classes_; }
  std::size_t width() const noexcept { return width_; }

  /// Index into classes().
  virtual std::size_t predict_index(std::span<const double> x) const = 0;
  std::string predict(std::span<const double> x) const;
  std::vector<std::string> predict(const FeatureMatrix& m) const;

 protected:
  std::vector<std::string> classes_;
  std::size_t width_ = 0;
};

/// Rejects fewer than two classes, empty matrices and non-finite values.
std::unique_ptr<ClassifierModel> train_classifier(ClassifierKind kind, const FeatureMatrix& train,
                                                  const Hyperparams& params = {});

/// kNN over min-max normalised features; the normaliser is fitted on the
/// training set and applied to every query. Ties in the vote go to the class
/// with the nearest member.
class KnnClassifier final : public ClassifierModel {
 public:
  KnnClassifier(const FeatureMatrix& train, std::size_t k);
  ClassifierKind kind() const noexcept override { return ClassifierKind::knn; }
  std::size_t predict_index(std::span<const double> x) const override;

 private:
  std::size_t k_;
  NormalizationParams norm_;
  std::vector<double> points_;
  std::vector<std::size_t> targets_;
};

/// CART with Gini impurity and midpoint thresholds.
class DecisionTree final : public ClassifierModel {
 public:
  DecisionTree(const FeatureMatrix& train, const Hyperparams& params);
  /// Trains on `rows` of `train` (repeats allowed) with precomputed targets.
  DecisionTree(const FeatureMatrix& train, std::span<const std::size_t> targets,
               std::vector<std::string> classes, std::vector<std::size_t> rows,
               const Hyperparams& params, std::uint64_t seed);
  ClassifierKind kind() const noexcept override { return ClassifierKind::decision_tree; }
  std::size_t predict_index(std::span<const double> x) const override;

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t depth() const noexcept { return depth_; }

 private:
  struct Node {
    std::size_t feature = 0;
    double threshold = 0.0;
    std::int32_t left = -1;  // -1 marks a leaf
    std::int32_t right = -1;
    std::size_t label = 0;
  };
  void fit(const FeatureMatrix& train, std::span<const std::size_t> targets,
           std::vector<std::size_t> rows, const Hyperparams& params, std::uint64_t seed);

  std::vector<Node> nodes_;
  std::size_t depth_ = 0;
};

/// Bagged CART trees with per-split feature subsampling; majority vote.
class RandomForest final : public ClassifierModel {
 public:
  RandomForest(const FeatureMatrix& train, const Hyperparams& params);
  ClassifierKind kind() const noexcept override { return ClassifierKind::random_forest; }
  std::size_t predict_index(std::span<const double> x) const override;
  std::size_t size() const noexcept { return trees_.size(); }

 private:
  std::vector<DecisionTree> trees_;
};

struct ClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  /// Set when the class has no test rows; its metrics are then 0.
  bool absent = false;
};

struct ClassificationReport {
  std::vector<std::string> classes;
  std::vector<ClassMetrics> per_class;
  /// confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
};

/// Metrics from label vectors over a fixed class list. Precision with no
/// predictions of a class is 0; F1 with precision + recall = 0 is 0. Macro
/// averages cover the classes that occur in `truth` or `predicted`.
ClassificationReport classification_report(std::span<const std::string> classes,
                                            std::span<const std::string> truth,
                                            std::span<const std::string> predicted);

/// Throws AnalysisError when a test label was not seen in training.
ClassificationReport evaluate(const ClassifierModel& model, const FeatureMatrix& test);

struct SplitResult {
  FeatureMatrix train;
  FeatureMatrix test;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

/// Stratified: each label keeps round(fraction * count) rows in train, clamped
/// so both sides get at least one.
SplitResult split(const FeatureMatrix& m, double train_fraction = 0.8, std::uint64_t seed = 0,
                  bool stratify_by_label = true);

/// Stratified k-fold; returns the macro-F1 of each fold.
std::vector<double> cross_validate(ClassifierKind kind, const FeatureMatrix& train,
                                   const Hyperparams& params = {}, std::size_t folds = 5,
                                   std::uint64_t seed = 0);

}  // namespace xcb
