#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mbad/common.hpp"
#include "mbad/features.hpp"
#include "mbad/learn.hpp"

namespace mbad::eval {

// Counts relative to an explicit positive class; the pipeline default is
// positive = normal, which is the convention that reproduces the published
// score arithmetic of this problem family.
struct ConfusionMatrix {
    uint64_t tp = 0;
    uint64_t fp = 0;
    uint64_t tn = 0;
    uint64_t fn = 0;
    Label positive_class = Label::normal;

    uint64_t total() const { return tp + fp + tn + fn; }
};

// Scores in [0,1]; a metric whose denominator vanishes is reported as an
// explicit undefined marker, never as a silent zero.
struct MetricsReport {
    double accuracy = 0.0;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    ConfusionMatrix confusion;
};

ConfusionMatrix confusion(const std::vector<Label>& predictions,
                          const std::vector<Label>& labels, Label positive_class);
MetricsReport metrics(const ConfusionMatrix& cm);

// Any trained model plus what it needs to score an encoded feature row.
using AnyModel = std::variant<learn::LinearSvmModel, learn::RandomForestModel, learn::KnnModel,
                              learn::KMeansModel>;

const char* algorithm_tag(const AnyModel& model);
size_t model_width(const AnyModel& model);
// Applies the model's stored standardization (when present) and predicts.
Label predict_any(const AnyModel& model, const learn::Vec& encoded_row);
std::vector<Label> predict_any_batch(const AnyModel& model, const learn::Matrix& encoded_rows);

struct FeatureImportance {
    std::string feature;
    double mean_decrease_accuracy = 0.0;
    std::optional<double> mean_decrease_gini;  // forest models only
};

struct ImportanceReport {
    std::vector<FeatureImportance> entries;  // one per column, schema order
    double baseline_accuracy = 0.0;
};

using Predictor = std::function<Label(const learn::Vec&)>;

// Accuracy after replacing column `col` of the rows by an explicit
// permutation of itself: the building block of permutation importance
// (the identity permutation reproduces the baseline exactly).
double accuracy_with_permuted_column(const Predictor& predict, const learn::Matrix& rows,
                                     const std::vector<Label>& labels, size_t col,
                                     const std::vector<size_t>& perm);

// Mean accuracy decrease over `repeats` seeded column shuffles, per
// feature. Deterministic for a fixed seed. Throws SchemaMismatch when the
// rows do not match the schema width.
ImportanceReport permutation_importance(const Predictor& predict, const learn::Matrix& rows,
                                        const std::vector<Label>& labels,
                                        const std::vector<std::string>& schema, int repeats,
                                        uint64_t seed);

// Forest-native permutation importance: per tree, the accuracy drop on
// its out-of-bag rows when one column is shuffled, averaged over trees.
// Unlike whole-ensemble permutation this credits every feature a tree
// relies on even when other trees cover for it. Requires a forest trained
// with bootstrap sampling and the rows it was trained on.
ImportanceReport oob_permutation_importance(const learn::RandomForestModel& model,
                                            const learn::Matrix& train_rows,
                                            const std::vector<Label>& train_labels,
                                            const std::vector<std::string>& schema, int repeats,
                                            uint64_t seed);

// Mean over trees of the node-weighted Gini impurity decrease attributed
// to each feature. Features never split on get exactly zero.
std::vector<double> gini_importance(const learn::RandomForestModel& model);

enum class Algorithm { svm, forest, knn, kmeans };

const char* to_string(Algorithm a);
std::optional<Algorithm> algorithm_from_string(const std::string& s);

struct ExperimentConfig {
    Algorithm algorithm = Algorithm::svm;
    double train_fraction = 0.7;
    bool stratified = true;
    uint64_t seed = 0;
    bool standardize = true;  // consumed by svm / knn / kmeans; the forest sees raw values
    Label positive_class = Label::normal;
    learn::SvmParams svm;
    learn::ForestParams forest;
    int knn_k = 5;
    learn::KMeansParams kmeans;
    bool compute_importance = true;
    int importance_repeats = 10;
};

struct Timings {
    double train_ms = 0.0;
    double predict_ms = 0.0;
    double importance_ms = 0.0;
};

struct SplitSpec {
    double fraction = 0.7;
    bool stratified = true;
};

struct ExperimentResult {
    MetricsReport metrics;
    ImportanceReport importance;
    AnyModel model;
    std::vector<std::string> schema;
    std::optional<SplitSpec> split;  // absent for the unsupervised path
    Timings timings;
};

// Train on the train split only, evaluate on the held-out split only
// (k-means: fit and evaluate on the full dataset, no split), then compute
// feature importances on the evaluation rows.
ExperimentResult run_experiment(const features::LabeledDataset& dataset,
                                const ExperimentConfig& config);

struct ReportInfo {
    std::string dataset;
    std::string algorithm;
    uint64_t seed = 0;
    std::optional<SplitSpec> split;
    Label positive_class = Label::normal;
    MetricsReport metrics;
    ImportanceReport importance;
    std::optional<Timings> timings;  // omitted from the default, byte-stable report
};

// Fixed-order JSON with all scores at 6 fractional digits; identical
// inputs render identical bytes.
std::string render_report(const ReportInfo& info);

}  // namespace mbad::eval
