#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mbad/common.hpp"
#include "mbad/features.hpp"

namespace mbad::learn {

using Vec = std::vector<double>;
using Matrix = std::vector<std::vector<double>>;

// ---------------------------------------------------------------------------
// Linear SVM
// ---------------------------------------------------------------------------

// Maximum-margin linear separator trained by a seeded subgradient schedule
// on the soft-margin hinge objective. Class attribution is
// sgn(w.x - b): +1 -> normal, -1 -> anomalous, exact zero -> normal.
struct LinearSvmModel {
    Vec w;
    double b = 0.0;
    double regularization_c = 1.0;
    std::optional<features::Standardization> standardization;
};

struct SvmParams {
    double c = 1.0;
    int epochs = 200;
};

LinearSvmModel train_svm(const Matrix& x, const std::vector<Label>& y, const SvmParams& params,
                         uint64_t seed);
double svm_decision(const LinearSvmModel& model, const Vec& x);
Label predict_svm(const LinearSvmModel& model, const Vec& x);

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // x[feature] <= threshold goes left
    int left = -1;
    int right = -1;
    Label leaf = Label::normal;
    double weighted_decrease = 0.0;  // (node rows / root rows) * Gini decrease
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    double total_decrease = 0.0;
};

struct ForestParams {
    int n_trees = 2000;
    int features_per_split = 0;  // 0 = floor(sqrt(width))
    bool bootstrap = true;
};

struct RandomForestModel {
    std::vector<DecisionTree> trees;
    int features_per_split = 0;
    int width = 0;
    uint64_t seed = 0;
    bool bootstrap = true;
};

// The in-bag row multiset tree `tree_index` was grown on, replayed from
// the per-tree seed; the complement is the tree's out-of-bag set.
std::vector<size_t> bootstrap_sample(size_t n_rows, uint64_t master_seed, size_t tree_index);

// Grows n_trees CART-style trees on bootstrap samples, each node searching
// a uniformly sampled feature subset for the split with the largest Gini
// impurity decrease. Ties prefer the higher feature index, then the lower
// threshold. Per-tree seeds derive from the master seed, so the parallel
// and serial builds produce identical forests.
RandomForestModel train_forest(const Matrix& x, const std::vector<Label>& y,
                               const ForestParams& params, uint64_t seed);
RandomForestModel train_forest_serial(const Matrix& x, const std::vector<Label>& y,
                                      const ForestParams& params, uint64_t seed);

Label predict_tree(const DecisionTree& tree, const Vec& x);
// Majority vote; an exact tie resolves to anomalous.
Label predict_forest(const RandomForestModel& model, const Vec& x);
std::vector<Label> predict_forest_batch(const RandomForestModel& model, const Matrix& rows);
std::vector<Label> predict_forest_batch_serial(const RandomForestModel& model,
                                               const Matrix& rows);

// ---------------------------------------------------------------------------
// k nearest neighbours
// ---------------------------------------------------------------------------

struct KnnModel {
    Matrix stored;
    std::vector<Label> stored_labels;
    int k = 5;
    std::optional<features::Standardization> standardization;
};

KnnModel knn_fit(Matrix x, std::vector<Label> y, int k);
// Majority label among the k nearest stored rows by Euclidean distance.
// Distance ties at the k-th rank break toward the lower stored-row index;
// a label tie breaks toward the single nearest neighbour's label.
Label knn_predict(const KnnModel& model, const Vec& x);
std::vector<Label> knn_predict_batch(const KnnModel& model, const Matrix& rows);
std::vector<Label> knn_predict_batch_serial(const KnnModel& model, const Matrix& rows);

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansParams {
    int k = 2;
    int max_iterations = 100;
    int restarts = 10;
};

struct KMeansModel {
    Matrix centroids;
    std::vector<Label> cluster_label_map;  // larger cluster -> normal
    int iterations_run = 0;
    double final_error = 0.0;           // sum of squared distances at the fixpoint
    std::vector<double> error_trace;    // error after each Lloyd iteration (winning restart)
    std::optional<features::Standardization> standardization;
};

// Lloyd iterations from a seeded farthest-point-spread initialization,
// best of `restarts` restarts by final error. The cluster with the most
// members maps to normal; an exact size tie keeps cluster 0 normal.
KMeansModel kmeans_fit(const Matrix& x, const KMeansParams& params, uint64_t seed);
KMeansModel kmeans_fit_serial(const Matrix& x, const KMeansParams& params, uint64_t seed);

// Nearest-centroid cluster index; a distance tie picks the lower index.
int kmeans_assign(const Matrix& centroids, const Vec& x);
Label kmeans_predict(const KMeansModel& model, const Vec& x);

// ---------------------------------------------------------------------------
// Naive threshold rules
// ---------------------------------------------------------------------------

// A conjunction of per-feature "normal value" sets discovered by
// exploratory analysis: a row is normal exactly when every rule's feature
// value lies in that rule's normal set.
struct ThresholdRule {
    std::string feature;
    std::vector<double> normal_values;                    // matched within 1e-9
    std::vector<std::pair<double, double>> normal_ranges; // inclusive bounds
};

struct ThresholdRuleSet {
    std::vector<ThresholdRule> rules;
};

Label naive_classify(const ThresholdRuleSet& rules, const Vec& row,
                     const std::vector<std::string>& schema);
std::vector<Label> naive_classify_batch(const ThresholdRuleSet& rules, const Matrix& rows,
                                        const std::vector<std::string>& schema);

}  // namespace mbad::learn
