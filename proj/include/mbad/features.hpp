#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mbad/capture.hpp"
#include "mbad/common.hpp"

namespace mbad::features {

// The 14 header-level features, one field per packet. Absent transport
// fields stay unset and are encoded with the missing sentinel (-1).
struct BasicFeatures {
    uint32_t frame_number = 0;
    int64_t frame_time = 0;  // epoch microseconds
    uint64_t eth_src = 0;
    uint64_t eth_dst = 0;
    std::optional<uint32_t> ip_src;
    std::optional<uint32_t> ip_dst;
    std::optional<uint8_t> ip_proto;
    uint32_t frame_len = 0;
    std::optional<uint8_t> tcp_flags;
    std::optional<uint16_t> tcp_srcport;
    std::optional<uint16_t> tcp_dstport;
    std::optional<uint16_t> udp_srcport;
    std::optional<uint16_t> udp_dstport;
    bool lost_segment = false;

    bool operator==(const BasicFeatures&) const = default;
};

// The 9 sequence-level features. Second/minute indices are tumbling
// windows anchored at the first frame of the capture; max/min/mean are
// running statistics over the per-second counts of all seconds observed
// up to and including the row's own second.
struct DerivedFeatures {
    int64_t frame_time_min = 0;
    uint32_t packets_per_minute = 0;
    int64_t frame_time_sec = 0;
    uint32_t packets_per_sec = 0;
    uint32_t packets_per_ip_dst = 0;
    uint32_t stats_packets_per_proto = 0;
    uint32_t max_packets = 0;
    uint32_t min_packets = 0;
    double mean_packets = 0.0;

    bool operator==(const DerivedFeatures&) const = default;
};

struct LabeledRow {
    BasicFeatures basic;
    DerivedFeatures derived;
    Label label = Label::normal;

    bool operator==(const LabeledRow&) const = default;
};

struct LabeledDataset {
    std::vector<LabeledRow> rows;
    std::string source_name;
};

// Per-frame ground truth distributed separately from the packets.
struct LabelSidecar {
    bool default_normal = false;
    std::vector<std::pair<uint32_t, Label>> entries;  // (frame number, label)
};

// First-appearance integer coding for the categorical columns. Codes are
// ordinal only by construction; distance-based learners see them as plain
// numbers.
struct EncodingMap {
    struct Column {
        std::map<std::string, int> code_of;
        std::vector<std::string> value_of;  // code -> original value

        int encode(const std::string& value) {
            auto [it, inserted] = code_of.try_emplace(value, static_cast<int>(value_of.size()));
            if (inserted) value_of.push_back(value);
            return it->second;
        }
        std::optional<int> lookup(const std::string& value) const {
            auto it = code_of.find(value);
            if (it == code_of.end()) return std::nullopt;
            return it->second;
        }
    };
    static constexpr int kMissing = -1;
    std::map<std::string, Column> columns;  // keyed by feature name
};

struct Standardization {
    std::vector<double> mean;
    std::vector<double> stddev;  // 0 marks a constant column (mapped to all-zero)
};

// Dense numeric view of a dataset: 23 columns (14 basic + 9 derived) in
// the canonical order of column_names(), aligned labels, and the coding
// tables needed to decode categorical cells.
struct FeatureMatrix {
    std::vector<std::string> column_names;
    std::vector<std::vector<double>> rows;
    std::vector<Label> labels;
    EncodingMap encoding;
    std::optional<Standardization> standardization;

    size_t width() const { return column_names.size(); }
    size_t size() const { return rows.size(); }
};

constexpr size_t kBasicFeatureCount = 14;
constexpr size_t kDerivedFeatureCount = 9;
constexpr size_t kFeatureCount = kBasicFeatureCount + kDerivedFeatureCount;

// Canonical column order; names match the capture tooling the features
// were modeled on (frame.number ... mean_packets).
const std::array<std::string, kFeatureCount>& column_names();
int column_index(const std::string& name);  // -1 when unknown

// One BasicFeatures row per packet record, in capture order.
std::vector<BasicFeatures> extract_basic(const std::vector<capture::PacketRecord>& records);

// Sequence features over time-ordered rows. Throws EmptyInput.
std::vector<DerivedFeatures> derive(const std::vector<BasicFeatures>& rows);

// Join packets with sidecar ground truth. Unlabeled frames are normal only
// when the sidecar declares default_normal.
// Throws UnknownFrameNumber, DuplicateLabel, MissingLabel.
LabeledDataset attach_labels(const std::vector<BasicFeatures>& basic,
                             const std::vector<DerivedFeatures>& derived,
                             const LabelSidecar& sidecar, const std::string& source_name);

// Numeric encoding: categorical columns coded by first appearance,
// missing fields -1, booleans 0/1, everything else passed through.
FeatureMatrix encode(const LabeledDataset& dataset);

// Z-score every column using statistics of the fit_on rows only; constant
// columns map to zero. Returns a transformed copy with the statistics
// attached for reuse on future rows.
FeatureMatrix standardize(const FeatureMatrix& matrix, const std::vector<size_t>& fit_on);
std::vector<double> apply_standardization(const Standardization& st,
                                          const std::vector<double>& row);

struct SplitIndices {
    std::vector<size_t> train;
    std::vector<size_t> test;
};

// Deterministic train/test partition of row indices; stratified mode
// preserves the class ratio within one row per class.
// Throws TooFewRows.
SplitIndices split(const std::vector<Label>& labels, double train_fraction, uint64_t seed,
                   bool stratified);

// Feature CSV (paper column names + final label column, RFC 4180).
void write_feature_csv(const LabeledDataset& dataset, std::ostream& out);
LabeledDataset read_feature_csv(std::istream& in, const std::string& source_name);
void write_feature_csv_file(const LabeledDataset& dataset, const std::string& path);
LabeledDataset read_feature_csv_file(const std::string& path);

// Label sidecar CSV: "frame.number,label" rows, optional "#default_normal".
void write_sidecar(const LabelSidecar& sidecar, std::ostream& out);
LabelSidecar read_sidecar(std::istream& in);
void write_sidecar_file(const LabelSidecar& sidecar, const std::string& path);
LabelSidecar read_sidecar_file(const std::string& path);

}  // namespace mbad::features
