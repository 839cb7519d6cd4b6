#include "xcb/classify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <thread>

namespace xcb {

namespace {

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::string> distinct_labels(const FeatureMatrix& m) {
  std::vector<std::string> out(m.labels().begin(), m.labels().end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::size_t> encode(const FeatureMatrix& m, const std::vector<std::string>& classes) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto it = std::lower_bound(classes.begin(), classes.end(), m.labels()[r]);
    if (it == classes.end() || *it != m.labels()[r])
      throw AnalysisError("label not in class list: " + m.labels()[r]);
    out[r] = static_cast<std::size_t>(it - classes.begin());
  }
  return out;
}

void check_training_set(const FeatureMatrix& train) {
  if (train.rows() == 0 || train.cols() == 0) throw AnalysisError("empty training set");
  train.validate();
  if (distinct_labels(train).size() < 2) throw AnalysisError("training set needs at least two classes");
}

std::size_t argmax(const std::vector<std::size_t>& counts) {
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace

std::string_view to_string(ClassifierKind k) noexcept {
  switch (k) {
    case ClassifierKind::knn: return "knn";
    case ClassifierKind::decision_tree: return "decision_tree";
    case ClassifierKind::random_forest: return "random_forest";
  }
  return "unknown";
}

ClassifierKind classifier_kind(std::string_view name) {
  if (name == "knn") return ClassifierKind::knn;
  if (name == "decision_tree" || name == "dt") return ClassifierKind::decision_tree;
  if (name == "random_forest" || name == "rf") return ClassifierKind::random_forest;
  throw AnalysisError("unknown classifier: " + std::string(name));
}

std::string ClassifierModel::predict(std::span<const double> x) const {
  if (x.size() != width_) throw AnalysisError("feature vector width does not match the model");
  return classes_[predict_index(x)];
}

std::vector<std::string> ClassifierModel::predict(const FeatureMatrix& m) const {
  if (m.cols() != width_) throw AnalysisError("feature matrix width does not match the model");
  std::vector<std::string> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = classes_[predict_index(m.row(r))];
  return out;
}

std::unique_ptr<ClassifierModel> train_classifier(ClassifierKind kind, const FeatureMatrix& train,
                                                  const Hyperparams& params) {
  check_training_set(train);
  switch (kind) {
    case ClassifierKind::knn: return std::make_unique<KnnClassifier>(train, params.k);
    case ClassifierKind::decision_tree: return std::make_unique<DecisionTree>(train, params);
    case ClassifierKind::random_forest: return std::make_unique<RandomForest>(train, params);
  }
  throw AnalysisError("unknown classifier kind");
}

// kNN

KnnClassifier::KnnClassifier(const FeatureMatrix& train, std::size_t k) : k_(k) {
  check_training_set(train);
  if (k == 0 || k > train.rows()) throw AnalysisError("k must be in [1, training rows]");
  classes_ = distinct_labels(train);
  width_ = train.cols();
  targets_ = encode(train, classes_);
  auto [normed, params] = minmax_fit_transform(train);
  norm_ = std::move(params);
  points_.reserve(train.rows() * width_);
  for (std::size_t r = 0; r < normed.rows(); ++r)
    points_.insert(points_.end(), normed.row(r).begin(), normed.row(r).end());
}

std::size_t KnnClassifier::predict_index(std::span<const double> x) const {
  std::vector<double> q(x.begin(), x.end());
  minmax_transform_row(q, norm_);
  const std::size_t n = targets_.size();
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = points_.data() + i * width_;
    double acc = 0.0;
    for (std::size_t j = 0; j < width_; ++j) {
      const double d = p[j] - q[j];
      acc += d * d;
    }
    dist[i] = {acc, i};
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_), dist.end());
  std::vector<std::size_t> votes(classes_.size(), 0);
  std::vector<std::size_t> first_seen(classes_.size(), k_);
  for (std::size_t i = 0; i < k_; ++i) {
    const std::size_t c = targets_[dist[i].second];
    ++votes[c];
    first_seen[c] = std::min(first_seen[c], i);
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < votes.size(); ++c) {
    if (votes[c] > votes[best] || (votes[c] == votes[best] && first_seen[c] < first_seen[best])) best = c;
  }
  return best;
}

// Decision tree

DecisionTree::DecisionTree(const FeatureMatrix& train, const Hyperparams& params) {
  check_training_set(train);
  classes_ = distinct_labels(train);
  width_ = train.cols();
  const std::vector<std::size_t> targets = encode(train, classes_);
  std::vector<std::size_t> rows(train.rows());
  std::iota(rows.begin(), rows.end(), 0);
  fit(train, targets, std::move(rows), params, params.seed);
}

DecisionTree::DecisionTree(const FeatureMatrix& train, std::span<const std::size_t> targets,
                           std::vector<std::string> classes, std::vector<std::size_t> rows,
                           const Hyperparams& params, std::uint64_t seed) {
  classes_ = std::move(classes);
  width_ = train.cols();
  fit(train, targets, std::move(rows), params, seed);
}

void DecisionTree::fit(const FeatureMatrix& train, std::span<const std::size_t> targets,
                       std::vector<std::size_t> rows, const Hyperparams& params, std::uint64_t seed) {
  const std::size_t p = width_;
  const std::size_t n_classes = classes_.size();
  const std::size_t max_features = std::clamp<std::size_t>(params.max_features.value_or(p), 1, p);
  const std::size_t min_split = std::max<std::size_t>(params.min_samples_split, 2);
  std::mt19937_64 rng(seed);

  struct Task {
    std::size_t node, begin, end, depth;
  };
  nodes_.clear();
  nodes_.emplace_back();
  std::vector<Task> stack{{0, 0, rows.size(), 0}};
  std::vector<std::size_t> features(p);
  std::iota(features.begin(), features.end(), 0);
  std::vector<std::pair<double, std::size_t>> column;
  std::vector<std::size_t> left(n_classes), right(n_classes), counts(n_classes);

  while (!stack.empty()) {
    const Task t = stack.back();
    stack.pop_back();
    depth_ = std::max(depth_, t.depth);
    const std::size_t n = t.end - t.begin;

    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = t.begin; i < t.end; ++i) ++counts[targets[rows[i]]];
    nodes_[t.node].label = argmax(counts);
    const bool pure = counts[nodes_[t.node].label] == n;
    if (pure || n < min_split || (params.max_depth && t.depth >= *params.max_depth)) continue;

    double parent_sq = 0.0;
    for (const std::size_t c : counts) parent_sq += static_cast<double>(c) * static_cast<double>(c);

    double best_score = -1.0;
    std::size_t best_feature = p;
    double best_threshold = 0.0;
    std::size_t visited = 0;
    for (std::size_t f = 0; f < p && (visited < max_features || best_feature == p); ++f) {
      // Partial Fisher-Yates: draw the next candidate feature.
      std::uniform_int_distribution<std::size_t> pick(f, p - 1);
      std::swap(features[f], features[pick(rng)]);
      const std::size_t feat = features[f];

      column.clear();
      for (std::size_t i = t.begin; i < t.end; ++i) column.emplace_back(train.at(rows[i], feat), targets[rows[i]]);
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      ++visited;

      std::fill(left.begin(), left.end(), 0);
      right = counts;
      double sq_l = 0.0, sq_r = parent_sq;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t c = column[i].second;
        sq_l += 2.0 * static_cast<double>(left[c]) + 1.0;
        sq_r -= 2.0 * static_cast<double>(right[c]) - 1.0;
        ++left[c];
        --right[c];
        if (column[i].first == column[i + 1].first) continue;
        const double nl = static_cast<double>(i + 1), nr = static_cast<double>(n - i - 1);
        const double score = sq_l / nl + sq_r / nr;
        if (score > best_score) {
          best_score = score;
          best_feature = feat;
          double mid = column[i].first + (column[i + 1].first - column[i].first) / 2.0;
          if (mid >= column[i + 1].first) mid = column[i].first;
          best_threshold = mid;
        }
      }
    }
    if (best_feature == p) continue;

    const auto mid_it = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(t.begin),
                                       rows.begin() + static_cast<std::ptrdiff_t>(t.end),
                                       [&](std::size_t r) { return train.at(r, best_feature) <= best_threshold; });
    const std::size_t mid = static_cast<std::size_t>(mid_it - rows.begin());
    const auto l = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();
    nodes_.emplace_back();
    Node& node = nodes_[t.node];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = l + 1;
    stack.push_back({static_cast<std::size_t>(l + 1), mid, t.end, t.depth + 1});
    stack.push_back({static_cast<std::size_t>(l), t.begin, mid, t.depth + 1});
  }
}

std::size_t DecisionTree::predict_index(std::span<const double> x) const {
  std::size_t i = 0;
  while (nodes_[i].left >= 0) {
    const Node& node = nodes_[i];
    i = static_cast<std::size_t>(x[node.feature] <= node.threshold ? node.left : node.right);
  }
  return nodes_[i].label;
}

// Random forest

RandomForest::RandomForest(const FeatureMatrix& train, const Hyperparams& params) {
  check_training_set(train);
  if (params.n_estimators == 0) throw AnalysisError("n_estimators must be positive");
  classes_ = distinct_labels(train);
  width_ = train.cols();
  const std::vector<std::size_t> targets = encode(train, classes_);

  Hyperparams tree_params = params;
  if (!tree_params.max_features) {
    tree_params.max_features = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::sqrt(static_cast<double>(width_))));
  }

  const std::size_t n = train.rows();
  std::vector<std::optional<DecisionTree>> built(params.n_estimators);
  const auto grow = [&](std::size_t t) {
    std::mt19937_64 rng(mix64(params.seed, t));
    std::vector<std::size_t> rows(n);
    if (params.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& r : rows) r = pick(rng);
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    built[t].emplace(train, targets, classes_, std::move(rows), tree_params, rng());
  };

  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, params.n_estimators);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t t = w; t < params.n_estimators; t += workers) grow(t);
    });
  }
  for (auto& th : pool) th.join();

  trees_.reserve(built.size());
  for (auto& tree : built) trees_.push_back(std::move(*tree));
}

std::size_t RandomForest::predict_index(std::span<const double> x) const {
  std::vector<std::size_t> votes(classes_.size(), 0);
  for (const DecisionTree& tree : trees_) ++votes[tree.predict_index(x)];
  return argmax(votes);
}

// Metrics

ClassificationReport classification_report(std::span<const std::string> classes,
                                            std::span<const std::string> truth,
                                            std::span<const std::string> predicted) {
  if (truth.size() != predicted.size()) throw AnalysisError("truth and prediction lengths differ");
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index.emplace(classes[i], i);
  if (index.size() != classes.size()) throw AnalysisError("duplicate class label");
  const auto lookup = [&](const std::string& label) {
    const auto it = index.find(label);
    if (it == index.end()) throw AnalysisError("label not in class list: " + label);
    return it->second;
  };

  const std::size_t k = classes.size();
  ClassificationReport rep;
  rep.classes.assign(classes.begin(), classes.end());
  rep.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::size_t a = lookup(truth[i]), b = lookup(predicted[i]);
    ++rep.confusion[a][b];
    if (a == b) ++correct;
  }
  rep.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());

  std::size_t averaged = 0;
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics m;
    m.label = rep.classes[c];
    const std::size_t tp = rep.confusion[c][c];
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += rep.confusion[c][j];
      col += rep.confusion[j][c];
    }
    m.support = row;
    m.absent = row == 0;
    m.precision = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    m.recall = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    if (row > 0 || col > 0) {
      rep.macro_precision += m.precision;
      rep.macro_recall += m.recall;
      rep.macro_f1 += m.f1;
      ++averaged;
    }
    rep.per_class.push_back(std::move(m));
  }
  if (averaged > 0) {
    rep.macro_precision /= static_cast<double>(averaged);
    rep.macro_recall /= static_cast<double>(averaged);
    rep.macro_f1 /= static_cast<double>(averaged);
  }
  return rep;
}

ClassificationReport evaluate(const ClassifierModel& model, const FeatureMatrix& test) {
  if (test.rows() == 0) throw AnalysisError("empty test set");
  const std::vector<std::string> predicted = model.predict(test);
  return classification_report(model.classes(), test.labels(), predicted);
}

// Splitting

namespace {

std::map<std::string, std::vector<std::size_t>> rows_by_label(const FeatureMatrix& m) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t r = 0; r < m.rows(); ++r) out[m.labels()[r]].push_back(r);
  return out;
}

std::size_t train_count(std::size_t n, double fraction) {
  const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(want, 1, n - 1);
}

}  // namespace

SplitResult split(const FeatureMatrix& m, double train_fraction, std::uint64_t seed,
                  bool stratify_by_label) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw AnalysisError("train fraction must be in (0, 1)");
  if (m.labels().size() != m.rows()) throw AnalysisError("labels do not align with rows");
  std::mt19937_64 rng(seed);
  SplitResult out;

  const auto take = [&](std::vector<std::size_t> rows) {
    if (rows.size() < 2) throw AnalysisError("every label needs at least two rows to split");
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t cut = train_count(rows.size(), train_fraction);
    out.train_rows.insert(out.train_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(cut));
    out.test_rows.insert(out.test_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(cut), rows.end());
  };

  if (stratify_by_label) {
    for (auto& [label, rows] : rows_by_label(m)) {
      if (rows.size() < 2) throw AnalysisError("label " + label + " has fewer than two rows");
      take(std::move(rows));
    }
  } else {
    std::vector<std::size_t> rows(m.rows());
    std::iota(rows.begin(), rows.end(), 0);
    take(std::move(rows));
  }
  std::sort(out.train_rows.begin(), out.train_rows.end());
  std::sort(out.test_rows.begin(), out.test_rows.end());
  out.train = m.select_rows(out.train_rows);
  out.test = m.select_rows(out.test_rows);
  return out;
}

std::vector<double> cross_validate(ClassifierKind kind, const FeatureMatrix& train,
                                   const Hyperparams& params, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw AnalysisError("cross-validation needs at least two folds");
  if (train.rows() < folds) throw AnalysisError("fewer rows than folds");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> fold_of(train.rows());
  std::size_t offset = 0;
  for (auto& [label, rows] : rows_by_label(train)) {
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t i = 0; i < rows.size(); ++i) fold_of[rows[i]] = (offset + i) % folds;
    offset += rows.size();
  }

  std::vector<double> scores;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> fit_rows, hold_rows;
    for (std::size_t r = 0; r < train.rows(); ++r) (fold_of[r] == f ? hold_rows : fit_rows).push_back(r);
    const FeatureMatrix fit_m = train.select_rows(fit_rows);
    const FeatureMatrix hold_m = train.select_rows(hold_rows);
    const auto model = train_classifier(kind, fit_m, params);
    std::vector<std::string> predicted = model->predict(hold_m);
    // Held-out labels missing from the fitted classes count as misses.
    std::vector<std::string> classes = model->classes();
    for (const auto& l : hold_m.labels())
      if (!std::binary_search(model->classes().begin(), model->classes().end(), l)) classes.push_back(l);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    scores.push_back(classification_report(classes, hold_m.labels(), predicted).macro_f1);
  }
  return scores;
}

}  // namespace xcb
