// mbad: synthesize Modbus/TCP captures, extract features, train and
// evaluate the anomaly detectors, and report metrics and importances.
//
// Exit codes: 0 success, 2 usage or config error, 3 runtime or training
// failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mbad/capture.hpp"
#include "mbad/eval.hpp"
#include "mbad/features.hpp"
#include "mbad/learn.hpp"
#include "mbad/model_io.hpp"
#include "mbad/synth.hpp"

namespace {

using namespace mbad;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::string opt6(const std::optional<double>& v) {
    if (!v) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << text;
}

std::string file_stem(const std::string& path) {
    std::string stem = path;
    if (auto slash = stem.find_last_of('/'); slash != std::string::npos)
        stem = stem.substr(slash + 1);
    if (auto dot = stem.find_last_of('.'); dot != std::string::npos) stem = stem.substr(0, dot);
    return stem;
}

learn::ThresholdRuleSet load_rules_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("rules file: ") + e.what());
    }
    learn::ThresholdRuleSet rules;
    try {
        for (const auto& jr : j.at("rules")) {
            learn::ThresholdRule rule;
            rule.feature = jr.at("feature").get<std::string>();
            if (jr.contains("normal_values"))
                rule.normal_values = jr.at("normal_values").get<std::vector<double>>();
            if (jr.contains("normal_ranges"))
                for (const auto& r : jr.at("normal_ranges"))
                    rule.normal_ranges.emplace_back(r.at(0).get<double>(), r.at(1).get<double>());
            rules.rules.push_back(std::move(rule));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("rules file: ") + e.what());
    }
    return rules;
}

Label parse_positive_class(const std::string& s) {
    if (s == "normal") return Label::normal;
    if (s == "anomalous") return Label::anomalous;
    throw ConfigError("positive class must be 'normal' or 'anomalous'");
}

struct CommonReportArgs {
    std::string report_path;
    bool timings = false;
};

void emit_report(const eval::ReportInfo& info, const CommonReportArgs& args) {
    if (args.report_path.empty()) return;
    write_text_file(args.report_path, eval::render_report(info));
}

int cmd_synth(const std::string& scenario_path, std::optional<uint64_t> seed,
              const std::string& out_pcap, const std::string& out_labels) {
    synth::ScenarioSpec spec = synth::load_scenario_file(scenario_path);
    synth::GeneratedCapture generated = synth::run_scenario(spec, seed);
    capture::write_pcap_file(generated.capture, out_pcap);
    features::write_sidecar_file(generated.sidecar, out_labels);
    size_t anomalous = generated.sidecar.entries.size();
    std::cout << "wrote " << generated.capture.frames.size() << " frames to " << out_pcap
              << " (" << anomalous << " anomalous) and labels to " << out_labels << "\n";
    return kExitOk;
}

int cmd_extract(const std::string& pcap_path, const std::string& labels_path,
                const std::string& out_csv) {
    capture::RawCapture raw = capture::read_pcap_file(pcap_path);
    capture::DissectedCapture dissected = capture::dissect_capture(raw);
    for (const capture::DissectWarning& w : dissected.warnings)
        std::cerr << "warning: frame " << w.frame_number << ": " << w.message << "\n";
    capture::track_lost_segments(dissected.records);

    std::vector<features::BasicFeatures> basic = features::extract_basic(dissected.records);
    features::LabelSidecar sidecar = features::read_sidecar_file(labels_path);
    if (basic.empty()) {
        // header-only CSV for an empty capture
        features::LabeledDataset empty;
        empty.source_name = file_stem(pcap_path);
        features::write_feature_csv_file(empty, out_csv);
        std::cout << "wrote 0 rows to " << out_csv << "\n";
        return kExitOk;
    }
    std::vector<features::DerivedFeatures> derived = features::derive(basic);
    features::LabeledDataset ds =
        features::attach_labels(basic, derived, sidecar, file_stem(pcap_path));
    features::write_feature_csv_file(ds, out_csv);

    size_t anomalous = 0;
    for (const auto& row : ds.rows)
        if (row.label == Label::anomalous) ++anomalous;
    std::cout << "wrote " << ds.rows.size() << " rows to " << out_csv << " ("
              << ds.rows.size() - anomalous << " normal, " << anomalous << " anomalous)\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Modbus/TCP anomaly-detection toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a labeled capture from a scenario");
    std::string scenario_path, out_pcap, out_labels;
    std::optional<uint64_t> synth_seed;
    synth_cmd->add_option("--scenario", scenario_path, "scenario JSON file")->required();
    synth_cmd->add_option("--seed", synth_seed, "override the scenario seed");
    synth_cmd->add_option("--out-pcap", out_pcap, "output pcap path")->required();
    synth_cmd->add_option("--out-labels", out_labels, "output label sidecar path")->required();

    // extract
    auto* extract_cmd = app.add_subcommand("extract", "dissect a capture into a feature CSV");
    std::string pcap_path, labels_path, out_csv;
    extract_cmd->add_option("--pcap", pcap_path, "input pcap")->required();
    extract_cmd->add_option("--labels", labels_path, "label sidecar CSV")->required();
    extract_cmd->add_option("--out", out_csv, "output feature CSV")->required();

    // train-eval
    auto* train_cmd = app.add_subcommand("train-eval", "train a detector and score the held-out split");
    std::string features_path, algo_name = "svm", positive_name = "normal";
    std::string report_path, model_path, dataset_name;
    double split_fraction = 0.7;
    bool no_stratify = false, no_standardize = false, no_importance = false, timings = false;
    uint64_t seed = 0;
    double svm_c = 1.0;
    int svm_epochs = 200, trees = 2000, mtry = 0, knn_k = 5, clusters = 2, max_iter = 100,
        restarts = 10, repeats = 10;
    train_cmd->add_option("--features", features_path, "feature CSV")->required();
    train_cmd->add_option("--algo", algo_name, "svm | forest | knn | kmeans");
    auto* split_opt = train_cmd->add_option("--split", split_fraction, "train fraction (0.7 or 0.8)");
    train_cmd->add_flag("--no-stratify", no_stratify, "plain random split instead of stratified");
    train_cmd->add_option("--seed", seed, "master seed for split/training/importance");
    train_cmd->add_option("--c", svm_c, "SVM regularization");
    train_cmd->add_option("--epochs", svm_epochs, "SVM training epochs");
    train_cmd->add_option("--trees", trees, "forest size");
    train_cmd->add_option("--mtry", mtry, "features per split (0 = sqrt of width)");
    train_cmd->add_option("--k", knn_k, "neighbour count for knn");
    train_cmd->add_option("--clusters", clusters, "cluster count for kmeans");
    train_cmd->add_option("--max-iter", max_iter, "kmeans iteration cap");
    train_cmd->add_option("--restarts", restarts, "kmeans restarts");
    train_cmd->add_flag("--no-standardize", no_standardize,
                        "feed raw encoded values to svm/knn/kmeans");
    train_cmd->add_flag("--no-importance", no_importance, "skip permutation importance");
    train_cmd->add_option("--repeats", repeats, "permutation importance repeats");
    train_cmd->add_option("--positive-class", positive_name, "normal | anomalous");
    train_cmd->add_option("--report", report_path, "write the report JSON here");
    train_cmd->add_option("--model", model_path, "write the trained model here");
    train_cmd->add_option("--dataset-name", dataset_name, "dataset name for the report");
    train_cmd->add_flag("--timings", timings, "include wall-clock timings in the report");

    // naive
    auto* naive_cmd = app.add_subcommand("naive", "apply threshold rules to a feature CSV");
    std::string naive_features, rules_path, naive_report, naive_positive = "normal";
    uint64_t naive_seed = 0;
    int naive_repeats = 10;
    bool naive_timings = false;
    naive_cmd->add_option("--features", naive_features, "feature CSV")->required();
    naive_cmd->add_option("--rules", rules_path, "threshold rules JSON")->required();
    naive_cmd->add_option("--positive-class", naive_positive, "normal | anomalous");
    naive_cmd->add_option("--report", naive_report, "write the report JSON here");
    naive_cmd->add_option("--seed", naive_seed, "seed for permutation importance");
    naive_cmd->add_option("--repeats", naive_repeats, "permutation importance repeats");
    naive_cmd->add_flag("--timings", naive_timings, "include wall-clock timings in the report");

    // importance
    auto* imp_cmd = app.add_subcommand("importance", "feature importances of a saved model");
    std::string imp_features, imp_model, imp_report, imp_positive = "normal";
    uint64_t imp_seed = 0;
    int imp_repeats = 10;
    imp_cmd->add_option("--features", imp_features, "feature CSV")->required();
    imp_cmd->add_option("--model", imp_model, "model file from train-eval")->required();
    imp_cmd->add_option("--positive-class", imp_positive, "normal | anomalous");
    imp_cmd->add_option("--seed", imp_seed, "seed for the permutations");
    imp_cmd->add_option("--repeats", imp_repeats, "permutation repeats");
    imp_cmd->add_option("--report", imp_report, "write the report JSON here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: " << e.what() << "\n";
        std::cerr << app.help() << "\n";
        return kExitConfig;
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth(scenario_path, synth_seed, out_pcap, out_labels);
        if (extract_cmd->parsed()) return cmd_extract(pcap_path, labels_path, out_csv);

        if (train_cmd->parsed()) {
            auto algo = eval::algorithm_from_string(algo_name);
            if (!algo) {
                std::cerr << "error: unknown --algo '" << algo_name << "'\n" << app.help() << "\n";
                return kExitConfig;
            }
            features::LabeledDataset ds = features::read_feature_csv_file(features_path);
            eval::ExperimentConfig config;
            config.algorithm = *algo;
            config.train_fraction = split_fraction;
            config.stratified = !no_stratify;
            config.seed = seed;
            config.standardize = !no_standardize;
            config.positive_class = parse_positive_class(positive_name);
            config.svm = {svm_c, svm_epochs};
            config.forest = {trees, mtry, true};
            config.knn_k = knn_k;
            config.kmeans = {clusters, max_iter, restarts};
            config.compute_importance = !no_importance;
            config.importance_repeats = repeats;

            if (*algo == eval::Algorithm::kmeans && split_opt->count() > 0)
                std::cerr << "warning: --algo kmeans ignores --split; "
                             "clustering is evaluated on the full dataset\n";

            eval::ExperimentResult result = eval::run_experiment(ds, config);

            std::printf("accuracy=%.6f f1=%s\n", result.metrics.accuracy,
                        opt6(result.metrics.f1).c_str());

            eval::ReportInfo info;
            info.dataset = dataset_name.empty() ? ds.source_name : dataset_name;
            info.algorithm = eval::to_string(*algo);
            info.seed = seed;
            info.split = result.split;
            info.positive_class = config.positive_class;
            info.metrics = result.metrics;
            info.importance = result.importance;
            if (timings) info.timings = result.timings;
            emit_report(info, {report_path, timings});
            if (!model_path.empty())
                model_io::save_model_file(result.model, result.schema, model_path);
            return kExitOk;
        }

        if (naive_cmd->parsed()) {
            features::LabeledDataset ds = features::read_feature_csv_file(naive_features);
            learn::ThresholdRuleSet rules = load_rules_file(rules_path);
            features::FeatureMatrix encoded = features::encode(ds);
            std::vector<std::string> schema = encoded.column_names;

            std::vector<Label> predictions =
                learn::naive_classify_batch(rules, encoded.rows, schema);
            Label positive = parse_positive_class(naive_positive);
            eval::MetricsReport scores =
                eval::metrics(eval::confusion(predictions, encoded.labels, positive));

            std::printf("accuracy=%.6f f1=%s\n", scores.accuracy, opt6(scores.f1).c_str());

            eval::ReportInfo info;
            info.dataset = ds.source_name;
            info.algorithm = "naive";
            info.seed = naive_seed;
            info.positive_class = positive;
            info.metrics = scores;
            eval::Predictor predictor = [&rules, &schema](const learn::Vec& row) {
                return learn::naive_classify(rules, row, schema);
            };
            info.importance = eval::permutation_importance(predictor, encoded.rows,
                                                           encoded.labels, schema, naive_repeats,
                                                           naive_seed);
            emit_report(info, {naive_report, naive_timings});
            return kExitOk;
        }

        if (imp_cmd->parsed()) {
            features::LabeledDataset ds = features::read_feature_csv_file(imp_features);
            model_io::LoadedModel loaded = model_io::load_model_file(imp_model);
            features::FeatureMatrix encoded = features::encode(ds);
            if (model_io::schema_hash(encoded.column_names) != loaded.hash)
                throw SchemaMismatch("model was trained against a different column schema");

            const eval::AnyModel& model = loaded.model;
            eval::Predictor predictor = [&model](const learn::Vec& row) {
                return eval::predict_any(model, row);
            };
            Label positive = parse_positive_class(imp_positive);
            std::vector<Label> predictions = eval::predict_any_batch(model, encoded.rows);

            eval::ReportInfo info;
            info.dataset = ds.source_name;
            info.algorithm = eval::algorithm_tag(model);
            info.seed = imp_seed;
            info.positive_class = positive;
            info.metrics = eval::metrics(eval::confusion(predictions, encoded.labels, positive));
            info.importance =
                eval::permutation_importance(predictor, encoded.rows, encoded.labels,
                                             encoded.column_names, imp_repeats, imp_seed);
            if (const auto* rf = std::get_if<learn::RandomForestModel>(&loaded.model)) {
                std::vector<double> gini = eval::gini_importance(*rf);
                for (size_t f = 0; f < gini.size(); ++f)
                    info.importance.entries[f].mean_decrease_gini = gini[f];
            }

            for (const eval::FeatureImportance& fi : info.importance.entries)
                std::printf("%-28s %.6f\n", fi.feature.c_str(), fi.mean_decrease_accuracy);
            emit_report(info, {imp_report, false});
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const RuntimeFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
