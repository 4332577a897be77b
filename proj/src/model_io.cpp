#include "mbad/model_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace mbad::model_io {

namespace {

using nlohmann::json;

std::string dbl(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, end);
}

void append_vec(std::string& out, const std::vector<double>& v) {
    out += '[';
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += dbl(v[i]);
    }
    out += ']';
}

void append_matrix(std::string& out, const learn::Matrix& m) {
    out += '[';
    for (size_t i = 0; i < m.size(); ++i) {
        if (i) out += ',';
        append_vec(out, m[i]);
    }
    out += ']';
}

void append_standardization(std::string& out,
                            const std::optional<features::Standardization>& st) {
    if (!st) {
        out += "null";
        return;
    }
    out += "{\"mean\":";
    append_vec(out, st->mean);
    out += ",\"stddev\":";
    append_vec(out, st->stddev);
    out += '}';
}

std::string quote(const std::string& s) {
    // schema names contain no characters needing escapes beyond these
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    out += '"';
    return out;
}

std::vector<double> read_vec(const json& j) { return j.get<std::vector<double>>(); }

learn::Matrix read_matrix(const json& j) { return j.get<learn::Matrix>(); }

std::optional<features::Standardization> read_standardization(const json& j) {
    if (j.is_null()) return std::nullopt;
    features::Standardization st;
    st.mean = read_vec(j.at("mean"));
    st.stddev = read_vec(j.at("stddev"));
    return st;
}

std::vector<Label> read_labels(const json& j) {
    std::vector<Label> out;
    for (const auto& v : j) out.push_back(v.get<int>() ? Label::anomalous : Label::normal);
    return out;
}

}  // namespace

std::string schema_hash(const std::vector<std::string>& columns) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](char c) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    };
    for (const std::string& name : columns) {
        for (char c : name) mix(c);
        mix('\n');
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string serialize(const eval::AnyModel& model, const std::vector<std::string>& columns) {
    std::string out = "{\"format\":\"mbad-model\",\"algorithm\":\"";
    out += eval::algorithm_tag(model);
    out += "\",\"schema_hash\":\"" + schema_hash(columns) + "\",\"columns\":[";
    for (size_t i = 0; i < columns.size(); ++i) {
        if (i) out += ',';
        out += quote(columns[i]);
    }
    out += "],";

    if (const auto* svm = std::get_if<learn::LinearSvmModel>(&model)) {
        out += "\"standardization\":";
        append_standardization(out, svm->standardization);
        out += ",\"c\":" + dbl(svm->regularization_c) + ",\"b\":" + dbl(svm->b) + ",\"w\":";
        append_vec(out, svm->w);
    } else if (const auto* rf = std::get_if<learn::RandomForestModel>(&model)) {
        out += "\"features_per_split\":" + std::to_string(rf->features_per_split);
        out += ",\"width\":" + std::to_string(rf->width);
        out += ",\"seed\":" + std::to_string(rf->seed);
        out += std::string(",\"bootstrap\":") + (rf->bootstrap ? "true" : "false");
        out += ",\"trees\":[";
        for (size_t t = 0; t < rf->trees.size(); ++t) {
            if (t) out += ',';
            const learn::DecisionTree& tree = rf->trees[t];
            out += "{\"total_decrease\":" + dbl(tree.total_decrease) + ",\"nodes\":[";
            for (size_t n = 0; n < tree.nodes.size(); ++n) {
                if (n) out += ',';
                const learn::TreeNode& node = tree.nodes[n];
                out += '[' + std::to_string(node.feature) + ',' + dbl(node.threshold) + ',' +
                       std::to_string(node.left) + ',' + std::to_string(node.right) + ',' +
                       std::to_string(node.leaf == Label::anomalous ? 1 : 0) + ',' +
                       dbl(node.weighted_decrease) + ']';
            }
            out += "]}";
        }
        out += ']';
    } else if (const auto* knn = std::get_if<learn::KnnModel>(&model)) {
        out += "\"standardization\":";
        append_standardization(out, knn->standardization);
        out += ",\"k\":" + std::to_string(knn->k) + ",\"labels\":[";
        for (size_t i = 0; i < knn->stored_labels.size(); ++i) {
            if (i) out += ',';
            out += knn->stored_labels[i] == Label::anomalous ? '1' : '0';
        }
        out += "],\"rows\":";
        append_matrix(out, knn->stored);
    } else {
        const auto& km = std::get<learn::KMeansModel>(model);
        out += "\"standardization\":";
        append_standardization(out, km.standardization);
        out += ",\"iterations_run\":" + std::to_string(km.iterations_run);
        out += ",\"final_error\":" + dbl(km.final_error);
        out += ",\"error_trace\":";
        append_vec(out, km.error_trace);
        out += ",\"cluster_label_map\":[";
        for (size_t i = 0; i < km.cluster_label_map.size(); ++i) {
            if (i) out += ',';
            out += km.cluster_label_map[i] == Label::anomalous ? '1' : '0';
        }
        out += "],\"centroids\":";
        append_matrix(out, km.centroids);
    }
    out += "}\n";
    return out;
}

LoadedModel deserialize(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model file: ") + e.what());
    }
    try {
        if (j.at("format") != "mbad-model") throw ConfigError("model file: unknown format tag");
        LoadedModel loaded;
        loaded.columns = j.at("columns").get<std::vector<std::string>>();
        loaded.hash = j.at("schema_hash").get<std::string>();
        std::string algo = j.at("algorithm").get<std::string>();

        if (algo == "svm") {
            learn::LinearSvmModel m;
            m.standardization = read_standardization(j.at("standardization"));
            m.regularization_c = j.at("c").get<double>();
            m.b = j.at("b").get<double>();
            m.w = read_vec(j.at("w"));
            loaded.model = std::move(m);
        } else if (algo == "forest") {
            learn::RandomForestModel m;
            m.features_per_split = j.at("features_per_split").get<int>();
            m.width = j.at("width").get<int>();
            m.seed = j.at("seed").get<uint64_t>();
            m.bootstrap = j.at("bootstrap").get<bool>();
            for (const auto& jt : j.at("trees")) {
                learn::DecisionTree tree;
                tree.total_decrease = jt.at("total_decrease").get<double>();
                for (const auto& jn : jt.at("nodes")) {
                    learn::TreeNode node;
                    node.feature = jn.at(0).get<int>();
                    node.threshold = jn.at(1).get<double>();
                    node.left = jn.at(2).get<int>();
                    node.right = jn.at(3).get<int>();
                    node.leaf = jn.at(4).get<int>() ? Label::anomalous : Label::normal;
                    node.weighted_decrease = jn.at(5).get<double>();
                    tree.nodes.push_back(node);
                }
                m.trees.push_back(std::move(tree));
            }
            loaded.model = std::move(m);
        } else if (algo == "knn") {
            learn::KnnModel m;
            m.standardization = read_standardization(j.at("standardization"));
            m.k = j.at("k").get<int>();
            m.stored_labels = read_labels(j.at("labels"));
            m.stored = read_matrix(j.at("rows"));
            loaded.model = std::move(m);
        } else if (algo == "kmeans") {
            learn::KMeansModel m;
            m.standardization = read_standardization(j.at("standardization"));
            m.iterations_run = j.at("iterations_run").get<int>();
            m.final_error = j.at("final_error").get<double>();
            m.error_trace = read_vec(j.at("error_trace"));
            m.cluster_label_map = read_labels(j.at("cluster_label_map"));
            m.centroids = read_matrix(j.at("centroids"));
            loaded.model = std::move(m);
        } else {
            throw ConfigError("model file: unknown algorithm '" + algo + "'");
        }
        return loaded;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model file: ") + e.what());
    }
}

void save_model_file(const eval::AnyModel& model, const std::vector<std::string>& columns,
                     const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << serialize(model, columns);
}

LoadedModel load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(text);
}

}  // namespace mbad::model_io
