#include "mbad/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "mbad/rng.hpp"

namespace mbad::eval {

namespace {

double now_ms() {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

double accuracy_of(const std::vector<Label>& predictions, const std::vector<Label>& labels) {
    size_t correct = 0;
    for (size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

std::string fmt6(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string json_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

ConfusionMatrix confusion(const std::vector<Label>& predictions,
                          const std::vector<Label>& labels, Label positive_class) {
    if (predictions.size() != labels.size())
        throw LengthMismatch("confusion: " + std::to_string(predictions.size()) +
                             " predictions vs " + std::to_string(labels.size()) + " labels");
    ConfusionMatrix cm;
    cm.positive_class = positive_class;
    for (size_t i = 0; i < predictions.size(); ++i) {
        bool predicted_positive = predictions[i] == positive_class;
        bool is_positive = labels[i] == positive_class;
        if (predicted_positive && is_positive) ++cm.tp;
        else if (predicted_positive) ++cm.fp;
        else if (is_positive) ++cm.fn;
        else ++cm.tn;
    }
    return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw EmptyMatrix("metrics: empty confusion matrix");
    MetricsReport rep;
    rep.confusion = cm;
    rep.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
    if (cm.tp + cm.fp > 0)
        rep.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
    if (cm.tp + cm.fn > 0)
        rep.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
    if (rep.precision && rep.recall && *rep.precision + *rep.recall > 0.0)
        rep.f1 = 2.0 * *rep.precision * *rep.recall / (*rep.precision + *rep.recall);
    return rep;
}

const char* algorithm_tag(const AnyModel& model) {
    switch (model.index()) {
        case 0: return "svm";
        case 1: return "forest";
        case 2: return "knn";
        default: return "kmeans";
    }
}

size_t model_width(const AnyModel& model) {
    if (const auto* svm = std::get_if<learn::LinearSvmModel>(&model)) return svm->w.size();
    if (const auto* rf = std::get_if<learn::RandomForestModel>(&model))
        return static_cast<size_t>(rf->width);
    if (const auto* knn = std::get_if<learn::KnnModel>(&model))
        return knn->stored.front().size();
    return std::get<learn::KMeansModel>(model).centroids.front().size();
}

Label predict_any(const AnyModel& model, const learn::Vec& encoded_row) {
    if (const auto* svm = std::get_if<learn::LinearSvmModel>(&model)) {
        if (svm->standardization)
            return learn::predict_svm(
                *svm, features::apply_standardization(*svm->standardization, encoded_row));
        return learn::predict_svm(*svm, encoded_row);
    }
    if (const auto* rf = std::get_if<learn::RandomForestModel>(&model))
        return learn::predict_forest(*rf, encoded_row);
    if (const auto* knn = std::get_if<learn::KnnModel>(&model)) {
        if (knn->standardization)
            return learn::knn_predict(
                *knn, features::apply_standardization(*knn->standardization, encoded_row));
        return learn::knn_predict(*knn, encoded_row);
    }
    const auto& km = std::get<learn::KMeansModel>(model);
    if (km.standardization)
        return learn::kmeans_predict(
            km, features::apply_standardization(*km.standardization, encoded_row));
    return learn::kmeans_predict(km, encoded_row);
}

std::vector<Label> predict_any_batch(const AnyModel& model, const learn::Matrix& encoded_rows) {
    // the forest path dominates runtime; route it through the parallel kernel
    if (const auto* rf = std::get_if<learn::RandomForestModel>(&model))
        return learn::predict_forest_batch(*rf, encoded_rows);
    if (const auto* knn = std::get_if<learn::KnnModel>(&model)) {
        if (!knn->standardization) return learn::knn_predict_batch(*knn, encoded_rows);
        learn::Matrix transformed(encoded_rows.size());
        for (size_t i = 0; i < encoded_rows.size(); ++i)
            transformed[i] = features::apply_standardization(*knn->standardization, encoded_rows[i]);
        return learn::knn_predict_batch(*knn, transformed);
    }
    std::vector<Label> out(encoded_rows.size());
    for (size_t i = 0; i < encoded_rows.size(); ++i) out[i] = predict_any(model, encoded_rows[i]);
    return out;
}

double accuracy_with_permuted_column(const Predictor& predict, const learn::Matrix& rows,
                                     const std::vector<Label>& labels, size_t col,
                                     const std::vector<size_t>& perm) {
    size_t correct = 0;
    learn::Vec row;
    for (size_t i = 0; i < rows.size(); ++i) {
        row = rows[i];
        row[col] = rows[perm[i]][col];
        if (predict(row) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(rows.size());
}

ImportanceReport permutation_importance(const Predictor& predict, const learn::Matrix& rows,
                                        const std::vector<Label>& labels,
                                        const std::vector<std::string>& schema, int repeats,
                                        uint64_t seed) {
    if (rows.empty()) throw EmptyInput("permutation_importance: no rows");
    if (rows.front().size() != schema.size())
        throw SchemaMismatch("permutation_importance: rows have " +
                             std::to_string(rows.front().size()) + " columns, schema has " +
                             std::to_string(schema.size()));
    if (rows.size() != labels.size())
        throw LengthMismatch("permutation_importance: rows and labels differ");

    ImportanceReport report;
    std::vector<Label> baseline_pred(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) baseline_pred[i] = predict(rows[i]);
    report.baseline_accuracy = accuracy_of(baseline_pred, labels);

    const size_t d = schema.size();
    report.entries.resize(d);
    const size_t n = rows.size();

#pragma omp parallel for schedule(dynamic)
    for (ptrdiff_t fi = 0; fi < static_cast<ptrdiff_t>(d); ++fi) {
        auto f = static_cast<size_t>(fi);
        double sum = 0.0;
        for (int rep = 0; rep < repeats; ++rep) {
            Rng rng(derive_seed(derive_seed(seed, f), static_cast<uint64_t>(rep)));
            std::vector<size_t> perm = random_permutation(n, rng);
            sum += accuracy_with_permuted_column(predict, rows, labels, f, perm);
        }
        report.entries[f].feature = schema[f];
        report.entries[f].mean_decrease_accuracy =
            report.baseline_accuracy - sum / static_cast<double>(repeats);
    }
    return report;
}

ImportanceReport oob_permutation_importance(const learn::RandomForestModel& model,
                                            const learn::Matrix& train_rows,
                                            const std::vector<Label>& train_labels,
                                            const std::vector<std::string>& schema, int repeats,
                                            uint64_t seed) {
    if (train_rows.empty()) throw EmptyInput("oob_permutation_importance: no rows");
    if (train_rows.front().size() != schema.size())
        throw SchemaMismatch("oob_permutation_importance: rows do not match the schema");
    if (!model.bootstrap)
        throw RuntimeFailure("oob_permutation_importance: forest was trained without bootstrap");

    const size_t n = train_rows.size();
    const size_t d = schema.size();
    const size_t n_trees = model.trees.size();

    std::vector<std::vector<double>> per_tree_drop(n_trees);
    std::vector<double> per_tree_base(n_trees, 0.0);
    std::vector<uint8_t> tree_has_oob(n_trees, 0);

#pragma omp parallel for schedule(dynamic)
    for (ptrdiff_t ti = 0; ti < static_cast<ptrdiff_t>(n_trees); ++ti) {
        auto t = static_cast<size_t>(ti);
        std::vector<uint8_t> in_bag(n, 0);
        for (size_t r : learn::bootstrap_sample(n, model.seed, t)) in_bag[r] = 1;
        std::vector<size_t> oob;
        for (size_t i = 0; i < n; ++i)
            if (!in_bag[i]) oob.push_back(i);
        if (oob.empty()) continue;
        tree_has_oob[t] = 1;

        const learn::DecisionTree& tree = model.trees[t];
        size_t base_correct = 0;
        for (size_t i : oob)
            if (learn::predict_tree(tree, train_rows[i]) == train_labels[i]) ++base_correct;
        per_tree_base[t] = static_cast<double>(base_correct) / static_cast<double>(oob.size());

        // walk the tree with the permuted column patched in, no row copies
        auto predict_patched = [&tree](const learn::Vec& row, size_t col, double value) {
            const learn::TreeNode* node = &tree.nodes[0];
            while (node->feature >= 0) {
                auto f = static_cast<size_t>(node->feature);
                double v = f == col ? value : row[f];
                node = &tree.nodes[static_cast<size_t>(v <= node->threshold ? node->left
                                                                            : node->right)];
            }
            return node->leaf;
        };

        per_tree_drop[t].assign(d, 0.0);
        for (size_t f = 0; f < d; ++f) {
            double sum = 0.0;
            for (int rep = 0; rep < repeats; ++rep) {
                Rng rng(derive_seed(derive_seed(seed, t), f * 131 + static_cast<uint64_t>(rep)));
                std::vector<size_t> perm = random_permutation(oob.size(), rng);
                size_t correct = 0;
                for (size_t i = 0; i < oob.size(); ++i) {
                    double patched = train_rows[oob[perm[i]]][f];
                    if (predict_patched(train_rows[oob[i]], f, patched) == train_labels[oob[i]])
                        ++correct;
                }
                sum += static_cast<double>(correct) / static_cast<double>(oob.size());
            }
            per_tree_drop[t][f] = per_tree_base[t] - sum / static_cast<double>(repeats);
        }
    }

    ImportanceReport report;
    report.entries.resize(d);
    size_t used = 0;
    double base_sum = 0.0;
    std::vector<double> drop_sum(d, 0.0);
    for (size_t t = 0; t < n_trees; ++t) {
        if (!tree_has_oob[t]) continue;
        ++used;
        base_sum += per_tree_base[t];
        for (size_t f = 0; f < d; ++f) drop_sum[f] += per_tree_drop[t][f];
    }
    if (used == 0) throw RuntimeFailure("oob_permutation_importance: no out-of-bag rows");
    report.baseline_accuracy = base_sum / static_cast<double>(used);
    for (size_t f = 0; f < d; ++f) {
        report.entries[f].feature = schema[f];
        report.entries[f].mean_decrease_accuracy = drop_sum[f] / static_cast<double>(used);
    }
    return report;
}

std::vector<double> gini_importance(const learn::RandomForestModel& model) {
    std::vector<double> importance(static_cast<size_t>(model.width), 0.0);
    for (const learn::DecisionTree& tree : model.trees)
        for (const learn::TreeNode& node : tree.nodes)
            if (node.feature >= 0)
                importance[static_cast<size_t>(node.feature)] += node.weighted_decrease;
    for (double& v : importance) v /= static_cast<double>(model.trees.size());
    return importance;
}

const char* to_string(Algorithm a) {
    switch (a) {
        case Algorithm::svm: return "svm";
        case Algorithm::forest: return "forest";
        case Algorithm::knn: return "knn";
        default: return "kmeans";
    }
}

std::optional<Algorithm> algorithm_from_string(const std::string& s) {
    if (s == "svm") return Algorithm::svm;
    if (s == "forest" || s == "rf" || s == "random-forest") return Algorithm::forest;
    if (s == "knn") return Algorithm::knn;
    if (s == "kmeans" || s == "k-means") return Algorithm::kmeans;
    return std::nullopt;
}

ExperimentResult run_experiment(const features::LabeledDataset& dataset,
                                const ExperimentConfig& config) {
    if (dataset.rows.empty()) throw EmptyInput("run_experiment: empty dataset");
    features::FeatureMatrix encoded = features::encode(dataset);

    ExperimentResult result;
    result.schema = encoded.column_names;

    learn::Matrix eval_rows;
    std::vector<Label> eval_labels;
    learn::Matrix train_rows;
    std::vector<Label> train_labels;
    double t0 = now_ms();

    if (config.algorithm == Algorithm::kmeans) {
        // unsupervised path: fit and evaluate on the whole dataset
        learn::Matrix fit_rows = encoded.rows;
        std::optional<features::Standardization> st;
        if (config.standardize) {
            std::vector<size_t> all(encoded.size());
            for (size_t i = 0; i < all.size(); ++i) all[i] = i;
            features::FeatureMatrix standardized = features::standardize(encoded, all);
            fit_rows = standardized.rows;
            st = standardized.standardization;
        }
        learn::KMeansModel model = learn::kmeans_fit(fit_rows, config.kmeans, config.seed);
        model.standardization = st;
        result.model = std::move(model);
        eval_rows = encoded.rows;
        eval_labels = encoded.labels;
    } else {
        features::SplitIndices idx = features::split(encoded.labels, config.train_fraction,
                                                     config.seed, config.stratified);
        result.split = SplitSpec{config.train_fraction, config.stratified};

        std::optional<features::Standardization> st;
        train_rows.reserve(idx.train.size());
        train_labels.reserve(idx.train.size());

        bool wants_standardized = config.standardize && config.algorithm != Algorithm::forest;
        if (wants_standardized) {
            features::FeatureMatrix standardized = features::standardize(encoded, idx.train);
            st = standardized.standardization;
            for (size_t i : idx.train) {
                train_rows.push_back(standardized.rows[i]);
                train_labels.push_back(standardized.labels[i]);
            }
        } else {
            for (size_t i : idx.train) {
                train_rows.push_back(encoded.rows[i]);
                train_labels.push_back(encoded.labels[i]);
            }
        }

        switch (config.algorithm) {
            case Algorithm::svm: {
                learn::LinearSvmModel model =
                    learn::train_svm(train_rows, train_labels, config.svm, config.seed);
                model.standardization = st;
                result.model = std::move(model);
                break;
            }
            case Algorithm::forest: {
                result.model =
                    learn::train_forest(train_rows, train_labels, config.forest, config.seed);
                break;
            }
            case Algorithm::knn: {
                learn::KnnModel model =
                    learn::knn_fit(std::move(train_rows), std::move(train_labels), config.knn_k);
                model.standardization = st;
                result.model = std::move(model);
                break;
            }
            default: break;
        }

        eval_rows.reserve(idx.test.size());
        eval_labels.reserve(idx.test.size());
        for (size_t i : idx.test) {
            eval_rows.push_back(encoded.rows[i]);
            eval_labels.push_back(encoded.labels[i]);
        }
    }

    double t1 = now_ms();
    std::vector<Label> predictions = predict_any_batch(result.model, eval_rows);
    double t2 = now_ms();

    result.metrics = metrics(confusion(predictions, eval_labels, config.positive_class));

    if (config.compute_importance) {
        const AnyModel& model = result.model;
        const auto* rf = std::get_if<learn::RandomForestModel>(&result.model);
        if (rf && rf->bootstrap) {
            // forest-native estimator: per-tree out-of-bag accuracy drops
            result.importance =
                oob_permutation_importance(*rf, train_rows, train_labels, result.schema,
                                           config.importance_repeats,
                                           derive_seed(config.seed, 0x1a2b));
        } else {
            Predictor predictor = [&model](const learn::Vec& row) {
                return predict_any(model, row);
            };
            result.importance =
                permutation_importance(predictor, eval_rows, eval_labels, result.schema,
                                       config.importance_repeats, derive_seed(config.seed, 0x1a2b));
        }
        if (rf) {
            std::vector<double> gini = gini_importance(*rf);
            for (size_t f = 0; f < gini.size(); ++f)
                result.importance.entries[f].mean_decrease_gini = gini[f];
        }
    } else {
        result.importance.entries.resize(result.schema.size());
        for (size_t f = 0; f < result.schema.size(); ++f)
            result.importance.entries[f].feature = result.schema[f];
    }
    double t3 = now_ms();

    result.timings = {t1 - t0, t2 - t1, t3 - t2};
    return result;
}

std::string render_report(const ReportInfo& info) {
    std::string out;
    out += "{\n";
    out += "  \"dataset\": \"" + json_escape(info.dataset) + "\",\n";
    out += "  \"algorithm\": \"" + json_escape(info.algorithm) + "\",\n";
    out += "  \"seed\": " + std::to_string(info.seed) + ",\n";
    if (info.split) {
        out += "  \"split\": {\"fraction\": " + fmt6(info.split->fraction) +
               ", \"stratified\": " + (info.split->stratified ? "true" : "false") + "},\n";
    } else {
        out += "  \"split\": null,\n";
    }
    out += std::string("  \"positive_class\": \"") + mbad::to_string(info.positive_class) +
           "\",\n";
    const ConfusionMatrix& cm = info.metrics.confusion;
    out += "  \"confusion\": {\"tp\": " + std::to_string(cm.tp) +
           ", \"fp\": " + std::to_string(cm.fp) + ", \"tn\": " + std::to_string(cm.tn) +
           ", \"fn\": " + std::to_string(cm.fn) + "},\n";
    auto opt6 = [](const std::optional<double>& v) { return v ? fmt6(*v) : "null"; };
    out += "  \"metrics\": {\"accuracy\": " + fmt6(info.metrics.accuracy) +
           ", \"precision\": " + opt6(info.metrics.precision) +
           ", \"recall\": " + opt6(info.metrics.recall) + ", \"f1\": " + opt6(info.metrics.f1) +
           "},\n";
    out += "  \"importance\": [\n";
    for (size_t i = 0; i < info.importance.entries.size(); ++i) {
        const FeatureImportance& fi = info.importance.entries[i];
        out += "    {\"feature\": \"" + json_escape(fi.feature) +
               "\", \"mean_decrease_accuracy\": " + fmt6(fi.mean_decrease_accuracy) +
               ", \"mean_decrease_gini\": " + opt6(fi.mean_decrease_gini) + "}";
        out += i + 1 < info.importance.entries.size() ? ",\n" : "\n";
    }
    out += "  ],\n";
    if (info.timings) {
        out += "  \"timings\": {\"train_ms\": " + fmt6(info.timings->train_ms) +
               ", \"predict_ms\": " + fmt6(info.timings->predict_ms) +
               ", \"importance_ms\": " + fmt6(info.timings->importance_ms) + "}\n";
    } else {
        out += "  \"timings\": null\n";
    }
    out += "}\n";
    return out;
}

}  // namespace mbad::eval
