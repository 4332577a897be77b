#include "mbad/learn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mbad/rng.hpp"

namespace mbad::learn {

namespace {

void require_both_classes(const std::vector<Label>& y) {
    bool normal = false, anomalous = false;
    for (Label l : y) (l == Label::normal ? normal : anomalous) = true;
    if (!normal || !anomalous)
        throw SingleClassTrainingSet("training set contains only one class");
}

void require_dim(size_t got, size_t want) {
    if (got != want)
        throw DimensionMismatch("feature vector has " + std::to_string(got) +
                                " dimensions, model expects " + std::to_string(want));
}

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double sq_dist(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear SVM
// ---------------------------------------------------------------------------

namespace {

double svm_objective(const Matrix& x, const std::vector<double>& sign, const Vec& w,
                     double lambda) {
    double hinge = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double margin = sign[i] * dot(w, x[i]);
        if (margin < 1.0) hinge += 1.0 - margin;
    }
    return 0.5 * lambda * dot(w, w) + hinge / static_cast<double>(x.size());
}

}  // namespace

LinearSvmModel train_svm(const Matrix& x, const std::vector<Label>& y, const SvmParams& params,
                         uint64_t seed) {
    if (x.empty()) throw EmptyInput("train_svm: empty training set");
    if (x.size() != y.size()) throw LengthMismatch("train_svm: rows and labels differ");
    require_both_classes(y);
    if (params.c <= 0.0) throw RuntimeFailure("train_svm: regularization c must be positive");

    const size_t n = x.size();
    const size_t d = x.front().size();
    const double lambda = 1.0 / (params.c * static_cast<double>(n));
    const double radius = 1.0 / std::sqrt(lambda);

    // the offset rides along as a constant feature so it shares the
    // shrinking, regularized update; plain bias steps of size 1/(lambda t)
    // throw the early iterates far off and never recover
    Matrix aug(n);
    for (size_t i = 0; i < n; ++i) {
        aug[i] = x[i];
        aug[i].push_back(1.0);
    }

    std::vector<double> sign(n);
    for (size_t i = 0; i < n; ++i) sign[i] = label_sign(y[i]);

    Rng rng(seed);
    Vec w(d + 1, 0.0);
    Vec best_w = w;
    double best_obj = svm_objective(aug, sign, w, lambda);

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    uint64_t t = 1;
    for (int epoch = 0; epoch < params.epochs; ++epoch) {
        shuffle(order, rng);
        for (size_t i : order) {
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            const double margin = sign[i] * dot(w, aug[i]);
            const double keep = 1.0 - eta * lambda;  // = 1 - 1/t
            for (double& wj : w) wj *= keep;
            if (margin < 1.0) {
                const double step = eta * sign[i];
                for (size_t j = 0; j <= d; ++j) w[j] += step * aug[i][j];
            }
            // Pegasos projection onto the ball the optimum lives in
            double norm = std::sqrt(dot(w, w));
            if (norm > radius) {
                double scale = radius / norm;
                for (double& wj : w) wj *= scale;
            }
            ++t;
        }
        double obj = svm_objective(aug, sign, w, lambda);
        if (obj < best_obj) {
            best_obj = obj;
            best_w = w;
        }
    }

    LinearSvmModel model;
    model.b = -best_w.back();
    best_w.pop_back();
    model.w = std::move(best_w);
    model.regularization_c = params.c;
    return model;
}

double svm_decision(const LinearSvmModel& model, const Vec& x) {
    require_dim(x.size(), model.w.size());
    return dot(model.w, x) - model.b;
}

Label predict_svm(const LinearSvmModel& model, const Vec& x) {
    return svm_decision(model, x) >= 0.0 ? Label::normal : Label::anomalous;
}

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

namespace {

double gini(size_t n_normal, size_t n_anomalous) {
    size_t n = n_normal + n_anomalous;
    if (n == 0) return 0.0;
    double pn = static_cast<double>(n_normal) / static_cast<double>(n);
    double pa = static_cast<double>(n_anomalous) / static_cast<double>(n);
    return 1.0 - pn * pn - pa * pa;
}

struct TreeBuilder {
    const Matrix& x;
    const std::vector<Label>& y;
    int mtry;
    size_t root_size;
    Rng& rng;
    DecisionTree& tree;

    int build(std::vector<size_t>& rows) {
        size_t n_anom = 0;
        for (size_t r : rows)
            if (y[r] == Label::anomalous) ++n_anom;
        size_t n_norm = rows.size() - n_anom;

        int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();

        if (n_anom == 0 || n_norm == 0 || rows.size() < 2) {
            tree.nodes[static_cast<size_t>(node_id)].leaf = leaf_label(n_norm, n_anom);
            return node_id;
        }

        // sample the candidate features, then visit them in descending
        // order so equal-gain splits credit the highest feature index
        // (the sequence-level columns sit at the end of the schema)
        const size_t d = x.front().size();
        std::vector<size_t> all(d);
        for (size_t j = 0; j < d; ++j) all[j] = j;
        size_t take = std::min<size_t>(static_cast<size_t>(mtry), d);
        for (size_t j = 0; j < take; ++j) {
            size_t pick = j + static_cast<size_t>(rng.next_below(d - j));
            std::swap(all[j], all[pick]);
        }
        std::vector<size_t> candidates(all.begin(), all.begin() + static_cast<ptrdiff_t>(take));
        std::sort(candidates.rbegin(), candidates.rend());

        const double parent_gini = gini(n_norm, n_anom);
        double best_decrease = 1e-12;
        int best_feature = -1;
        double best_threshold = 0.0;

        std::vector<std::pair<double, Label>> vals;
        vals.reserve(rows.size());
        for (size_t f : candidates) {
            vals.clear();
            for (size_t r : rows) vals.emplace_back(x[r][f], y[r]);
            std::sort(vals.begin(), vals.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });

            size_t left_norm = 0, left_anom = 0;
            for (size_t i = 0; i + 1 < vals.size(); ++i) {
                (vals[i].second == Label::anomalous ? left_anom : left_norm) += 1;
                if (vals[i].first == vals[i + 1].first) continue;
                size_t nl = i + 1, nr = vals.size() - nl;
                double child =
                    (static_cast<double>(nl) * gini(left_norm, left_anom) +
                     static_cast<double>(nr) * gini(n_norm - left_norm, n_anom - left_anom)) /
                    static_cast<double>(vals.size());
                double decrease = parent_gini - child;
                if (decrease > best_decrease) {
                    best_decrease = decrease;
                    best_feature = static_cast<int>(f);
                    best_threshold = vals[i].first + (vals[i + 1].first - vals[i].first) / 2.0;
                }
            }
        }

        if (best_feature < 0) {
            // candidate features exhausted without a useful split
            tree.nodes[static_cast<size_t>(node_id)].leaf = leaf_label(n_norm, n_anom);
            return node_id;
        }

        std::vector<size_t> left_rows, right_rows;
        for (size_t r : rows)
            (x[r][static_cast<size_t>(best_feature)] <= best_threshold ? left_rows : right_rows)
                .push_back(r);

        double weighted =
            best_decrease * static_cast<double>(rows.size()) / static_cast<double>(root_size);
        tree.total_decrease += weighted;
        rows.clear();
        rows.shrink_to_fit();

        int left_id = build(left_rows);
        int right_id = build(right_rows);
        TreeNode& node = tree.nodes[static_cast<size_t>(node_id)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.weighted_decrease = weighted;
        node.left = left_id;
        node.right = right_id;
        return node_id;
    }

    static Label leaf_label(size_t n_norm, size_t n_anom) {
        return n_norm > n_anom ? Label::normal : Label::anomalous;
    }
};

std::vector<size_t> draw_with_replacement(Rng& rng, size_t n) {
    std::vector<size_t> rows(n);
    for (size_t i = 0; i < n; ++i) rows[i] = static_cast<size_t>(rng.next_below(n));
    return rows;
}

DecisionTree build_tree(const Matrix& x, const std::vector<Label>& y, bool bootstrap, int mtry,
                        uint64_t seed) {
    Rng rng(seed);
    std::vector<size_t> rows;
    const size_t n = x.size();
    if (bootstrap) {
        rows = draw_with_replacement(rng, n);
    } else {
        rows.resize(n);
        for (size_t i = 0; i < n; ++i) rows[i] = i;
    }
    DecisionTree tree;
    TreeBuilder builder{x, y, mtry, rows.size(), rng, tree};
    builder.build(rows);
    return tree;
}

RandomForestModel train_forest_impl(const Matrix& x, const std::vector<Label>& y,
                                    const ForestParams& params, uint64_t seed, bool parallel) {
    if (x.empty()) throw EmptyInput("train_forest: empty training set");
    if (x.size() != y.size()) throw LengthMismatch("train_forest: rows and labels differ");
    require_both_classes(y);
    if (params.n_trees < 1) throw RuntimeFailure("train_forest: need at least one tree");

    const int d = static_cast<int>(x.front().size());
    int mtry = params.features_per_split;
    if (mtry <= 0) mtry = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(d))));
    mtry = std::min(mtry, d);

    RandomForestModel model;
    model.features_per_split = mtry;
    model.width = d;
    model.seed = seed;
    model.bootstrap = params.bootstrap;
    model.trees.resize(static_cast<size_t>(params.n_trees));

    if (parallel) {
#pragma omp parallel for schedule(dynamic)
        for (int t = 0; t < params.n_trees; ++t)
            model.trees[static_cast<size_t>(t)] =
                build_tree(x, y, params.bootstrap, mtry, derive_seed(seed, static_cast<uint64_t>(t)));
    } else {
        for (int t = 0; t < params.n_trees; ++t)
            model.trees[static_cast<size_t>(t)] =
                build_tree(x, y, params.bootstrap, mtry, derive_seed(seed, static_cast<uint64_t>(t)));
    }
    return model;
}

}  // namespace

RandomForestModel train_forest(const Matrix& x, const std::vector<Label>& y,
                               const ForestParams& params, uint64_t seed) {
    return train_forest_impl(x, y, params, seed, true);
}

RandomForestModel train_forest_serial(const Matrix& x, const std::vector<Label>& y,
                                      const ForestParams& params, uint64_t seed) {
    return train_forest_impl(x, y, params, seed, false);
}

std::vector<size_t> bootstrap_sample(size_t n_rows, uint64_t master_seed, size_t tree_index) {
    Rng rng(derive_seed(master_seed, static_cast<uint64_t>(tree_index)));
    return draw_with_replacement(rng, n_rows);
}

Label predict_tree(const DecisionTree& tree, const Vec& x) {
    const TreeNode* node = &tree.nodes[0];
    while (node->feature >= 0)
        node = &tree.nodes[static_cast<size_t>(
            x[static_cast<size_t>(node->feature)] <= node->threshold ? node->left : node->right)];
    return node->leaf;
}

Label predict_forest(const RandomForestModel& model, const Vec& x) {
    require_dim(x.size(), static_cast<size_t>(model.width));
    size_t anomalous_votes = 0;
    for (const DecisionTree& tree : model.trees)
        if (predict_tree(tree, x) == Label::anomalous) ++anomalous_votes;
    // a tied vote raises the alarm
    return 2 * anomalous_votes >= model.trees.size() ? Label::anomalous : Label::normal;
}

std::vector<Label> predict_forest_batch(const RandomForestModel& model, const Matrix& rows) {
    std::vector<Label> out(rows.size());
#pragma omp parallel for schedule(static)
    for (ptrdiff_t i = 0; i < static_cast<ptrdiff_t>(rows.size()); ++i)
        out[static_cast<size_t>(i)] = predict_forest(model, rows[static_cast<size_t>(i)]);
    return out;
}

std::vector<Label> predict_forest_batch_serial(const RandomForestModel& model,
                                               const Matrix& rows) {
    std::vector<Label> out(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) out[i] = predict_forest(model, rows[i]);
    return out;
}

// ---------------------------------------------------------------------------
// k nearest neighbours
// ---------------------------------------------------------------------------

KnnModel knn_fit(Matrix x, std::vector<Label> y, int k) {
    if (x.empty()) throw EmptyInput("knn_fit: empty training set");
    if (x.size() != y.size()) throw LengthMismatch("knn_fit: rows and labels differ");
    if (k < 1 || static_cast<size_t>(k) > x.size())
        throw RuntimeFailure("knn_fit: k must lie in [1, stored rows]");
    KnnModel model;
    model.stored = std::move(x);
    model.stored_labels = std::move(y);
    model.k = k;
    return model;
}

Label knn_predict(const KnnModel& model, const Vec& x) {
    require_dim(x.size(), model.stored.front().size());
    const size_t n = model.stored.size();
    std::vector<std::pair<double, size_t>> dist(n);
    for (size_t i = 0; i < n; ++i) dist[i] = {sq_dist(model.stored[i], x), i};

    const auto k = static_cast<size_t>(model.k);
    std::partial_sort(dist.begin(), dist.begin() + static_cast<ptrdiff_t>(k), dist.end());

    size_t normal_votes = 0;
    for (size_t i = 0; i < k; ++i)
        if (model.stored_labels[dist[i].second] == Label::normal) ++normal_votes;
    if (2 * normal_votes > k) return Label::normal;
    if (2 * normal_votes < k) return Label::anomalous;
    return model.stored_labels[dist[0].second];  // label tie: nearest neighbour decides
}

std::vector<Label> knn_predict_batch(const KnnModel& model, const Matrix& rows) {
    std::vector<Label> out(rows.size());
#pragma omp parallel for schedule(static)
    for (ptrdiff_t i = 0; i < static_cast<ptrdiff_t>(rows.size()); ++i)
        out[static_cast<size_t>(i)] = knn_predict(model, rows[static_cast<size_t>(i)]);
    return out;
}

std::vector<Label> knn_predict_batch_serial(const KnnModel& model, const Matrix& rows) {
    std::vector<Label> out(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) out[i] = knn_predict(model, rows[i]);
    return out;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

namespace {

struct LloydResult {
    Matrix centroids;
    std::vector<int> assignment;
    std::vector<double> error_trace;
    double final_error = 0.0;
    int iterations = 0;
};

LloydResult lloyd_once(const Matrix& x, int k, int max_iterations, uint64_t seed, bool parallel) {
    const size_t n = x.size();
    const size_t d = x.front().size();
    Rng rng(seed);

    // farthest-point spread: random first centroid, then repeatedly the
    // point farthest from everything chosen so far (ties -> lower index)
    Matrix centroids;
    centroids.reserve(static_cast<size_t>(k));
    centroids.push_back(x[static_cast<size_t>(rng.next_below(n))]);
    std::vector<double> nearest_sq(n);
    for (int j = 1; j < k; ++j) {
        for (size_t i = 0; i < n; ++i) {
            double best = sq_dist(x[i], centroids[0]);
            for (size_t c = 1; c < centroids.size(); ++c)
                best = std::min(best, sq_dist(x[i], centroids[c]));
            nearest_sq[i] = best;
        }
        size_t far = 0;
        for (size_t i = 1; i < n; ++i)
            if (nearest_sq[i] > nearest_sq[far]) far = i;
        centroids.push_back(x[far]);
    }

    LloydResult res;
    res.assignment.assign(n, -1);
    std::vector<int> next(n, -1);
    std::vector<double> point_err(n, 0.0);

    for (int iter = 0; iter < max_iterations; ++iter) {
        if (parallel) {
#pragma omp parallel for schedule(static)
            for (ptrdiff_t i = 0; i < static_cast<ptrdiff_t>(n); ++i)
                next[static_cast<size_t>(i)] = kmeans_assign(centroids, x[static_cast<size_t>(i)]);
        } else {
            for (size_t i = 0; i < n; ++i) next[i] = kmeans_assign(centroids, x[i]);
        }
        if (next == res.assignment) break;  // assignment fixpoint
        res.assignment = next;
        ++res.iterations;

        // update step: mean of members; an emptied cluster keeps its centroid
        Matrix sums(static_cast<size_t>(k), Vec(d, 0.0));
        std::vector<size_t> counts(static_cast<size_t>(k), 0);
        for (size_t i = 0; i < n; ++i) {
            auto c = static_cast<size_t>(res.assignment[i]);
            ++counts[c];
            for (size_t j = 0; j < d; ++j) sums[c][j] += x[i][j];
        }
        for (size_t c = 0; c < static_cast<size_t>(k); ++c)
            if (counts[c] > 0)
                for (size_t j = 0; j < d; ++j)
                    centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);

        // per-point squared distances first, serial sum afterwards, so the
        // reported error does not depend on the thread count
        if (parallel) {
#pragma omp parallel for schedule(static)
            for (ptrdiff_t i = 0; i < static_cast<ptrdiff_t>(n); ++i)
                point_err[static_cast<size_t>(i)] = sq_dist(
                    x[static_cast<size_t>(i)],
                    centroids[static_cast<size_t>(res.assignment[static_cast<size_t>(i)])]);
        } else {
            for (size_t i = 0; i < n; ++i)
                point_err[i] = sq_dist(x[i], centroids[static_cast<size_t>(res.assignment[i])]);
        }
        double err = 0.0;
        for (double e : point_err) err += e;
        res.error_trace.push_back(err);
    }
    res.centroids = std::move(centroids);
    res.final_error = res.error_trace.empty() ? 0.0 : res.error_trace.back();
    return res;
}

KMeansModel kmeans_fit_impl(const Matrix& x, const KMeansParams& params, uint64_t seed,
                            bool parallel) {
    if (params.k < 1) throw RuntimeFailure("kmeans_fit: k must be positive");
    if (params.max_iterations < 1)
        throw RuntimeFailure("kmeans_fit: need at least one iteration");
    if (x.size() < static_cast<size_t>(params.k))
        throw TooFewRows("kmeans_fit: fewer rows than clusters");

    LloydResult best;
    bool have_best = false;
    for (int r = 0; r < std::max(1, params.restarts); ++r) {
        LloydResult res = lloyd_once(x, params.k, params.max_iterations,
                                     derive_seed(seed, static_cast<uint64_t>(r)), parallel);
        if (!have_best || res.final_error < best.final_error) {
            best = std::move(res);
            have_best = true;
        }
    }

    std::vector<size_t> sizes(static_cast<size_t>(params.k), 0);
    for (int a : best.assignment) ++sizes[static_cast<size_t>(a)];
    size_t largest = 0;
    for (size_t c = 1; c < sizes.size(); ++c)
        if (sizes[c] > sizes[largest]) largest = c;  // tie keeps the lower index

    KMeansModel model;
    model.centroids = std::move(best.centroids);
    model.cluster_label_map.assign(static_cast<size_t>(params.k), Label::anomalous);
    model.cluster_label_map[largest] = Label::normal;
    model.iterations_run = best.iterations;
    model.final_error = best.final_error;
    model.error_trace = std::move(best.error_trace);
    return model;
}

}  // namespace

KMeansModel kmeans_fit(const Matrix& x, const KMeansParams& params, uint64_t seed) {
    return kmeans_fit_impl(x, params, seed, true);
}

KMeansModel kmeans_fit_serial(const Matrix& x, const KMeansParams& params, uint64_t seed) {
    return kmeans_fit_impl(x, params, seed, false);
}

int kmeans_assign(const Matrix& centroids, const Vec& x) {
    int best = 0;
    double best_d = sq_dist(centroids[0], x);
    for (size_t c = 1; c < centroids.size(); ++c) {
        double d = sq_dist(centroids[c], x);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

Label kmeans_predict(const KMeansModel& model, const Vec& x) {
    require_dim(x.size(), model.centroids.front().size());
    return model.cluster_label_map[static_cast<size_t>(kmeans_assign(model.centroids, x))];
}

// ---------------------------------------------------------------------------
// Naive threshold rules
// ---------------------------------------------------------------------------

namespace {

constexpr double kRuleEps = 1e-9;

bool rule_passes(const ThresholdRule& rule, double value) {
    for (double v : rule.normal_values)
        if (std::abs(value - v) <= kRuleEps) return true;
    for (const auto& [lo, hi] : rule.normal_ranges)
        if (value >= lo - kRuleEps && value <= hi + kRuleEps) return true;
    return false;
}

std::vector<size_t> resolve_rules(const ThresholdRuleSet& rules,
                                  const std::vector<std::string>& schema) {
    std::vector<size_t> idx;
    idx.reserve(rules.rules.size());
    for (const ThresholdRule& rule : rules.rules) {
        auto it = std::find(schema.begin(), schema.end(), rule.feature);
        if (it == schema.end())
            throw UnknownFeature("rule references unknown feature '" + rule.feature + "'");
        idx.push_back(static_cast<size_t>(it - schema.begin()));
    }
    return idx;
}

}  // namespace

Label naive_classify(const ThresholdRuleSet& rules, const Vec& row,
                     const std::vector<std::string>& schema) {
    std::vector<size_t> idx = resolve_rules(rules, schema);
    for (size_t r = 0; r < rules.rules.size(); ++r)
        if (!rule_passes(rules.rules[r], row[idx[r]])) return Label::anomalous;
    return Label::normal;  // vacuous conjunction: no rules, everything normal
}

std::vector<Label> naive_classify_batch(const ThresholdRuleSet& rules, const Matrix& rows,
                                        const std::vector<std::string>& schema) {
    std::vector<size_t> idx = resolve_rules(rules, schema);
    std::vector<Label> out(rows.size(), Label::normal);
    for (size_t i = 0; i < rows.size(); ++i) {
        for (size_t r = 0; r < rules.rules.size(); ++r) {
            if (!rule_passes(rules.rules[r], rows[i][idx[r]])) {
                out[i] = Label::anomalous;
                break;
            }
        }
    }
    return out;
}

}  // namespace mbad::learn
