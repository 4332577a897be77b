#pragma once

#include <string>
#include <vector>

#include "mbad/eval.hpp"

namespace mbad::model_io {

// FNV-1a over the column names; model files refuse to score a matrix
// whose schema hash differs.
std::string schema_hash(const std::vector<std::string>& columns);

// Self-describing JSON document: algorithm tag, schema, parameters and
// weights/trees/centroids/stored rows. Doubles are written in shortest
// round-trip form, so a loaded model predicts bit-identically.
std::string serialize(const eval::AnyModel& model, const std::vector<std::string>& columns);

struct LoadedModel {
    eval::AnyModel model;
    std::vector<std::string> columns;
    std::string hash;
};

LoadedModel deserialize(const std::string& text);

void save_model_file(const eval::AnyModel& model, const std::vector<std::string>& columns,
                     const std::string& path);
LoadedModel load_model_file(const std::string& path);

}  // namespace mbad::model_io
