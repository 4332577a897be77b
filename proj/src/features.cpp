#include "mbad/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "mbad/rng.hpp"

namespace mbad::features {

namespace {

const std::array<std::string, kFeatureCount> kColumnNames = {
    "frame.number",
    "frame.time",
    "eth.src",
    "eth.dst",
    "ip.src",
    "ip.dst",
    "ip.proto",
    "frame.len",
    "tcp.flags",
    "tcp.srcport",
    "tcp.dstport",
    "udp.srcport",
    "udp.dstport",
    "tcp.analysis.lost_segment",
    "frame.time.min",
    "packets_per_minute",
    "frame.time.sec",
    "packets_per_sec",
    "packets_per_ip.dst",
    "stats.packets_per_proto",
    "max_packets",
    "min_packets",
    "mean_packets",
};

// Group key for the whole-capture per-destination / per-protocol counts;
// missing values form their own group.
int64_t group_key(const std::optional<uint32_t>& v) {
    return v ? static_cast<int64_t>(*v) : -1;
}
int64_t group_key(const std::optional<uint8_t>& v) {
    return v ? static_cast<int64_t>(*v) : -1;
}

std::string csv_escape(const std::string& cell) {
    if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

// One CSV record, honoring quotes; multi-line cells are not needed here.
std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    cells.push_back(std::move(cur));
    return cells;
}

template <typename T>
std::string opt_to_cell(const std::optional<T>& v) {
    return v ? std::to_string(static_cast<int64_t>(*v)) : std::string();
}

int64_t parse_int(const std::string& cell, const char* what) {
    try {
        size_t pos = 0;
        int64_t v = std::stoll(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw CsvFormatError(std::string("bad ") + what + " value: '" + cell + "'");
    }
}

double parse_double(const std::string& cell, const char* what) {
    try {
        size_t pos = 0;
        double v = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw CsvFormatError(std::string("bad ") + what + " value: '" + cell + "'");
    }
}

Label parse_label(const std::string& cell) {
    if (cell == "normal") return Label::normal;
    if (cell == "anomalous") return Label::anomalous;
    throw CsvFormatError("bad label value: '" + cell + "'");
}

}  // namespace

const std::array<std::string, kFeatureCount>& column_names() { return kColumnNames; }

int column_index(const std::string& name) {
    for (size_t i = 0; i < kColumnNames.size(); ++i)
        if (kColumnNames[i] == name) return static_cast<int>(i);
    return -1;
}

std::vector<BasicFeatures> extract_basic(const std::vector<capture::PacketRecord>& records) {
    std::vector<BasicFeatures> rows;
    rows.reserve(records.size());
    for (const capture::PacketRecord& rec : records) {
        BasicFeatures row;
        row.frame_number = rec.frame_number;
        row.frame_time = rec.frame_time;
        row.eth_src = rec.eth_src;
        row.eth_dst = rec.eth_dst;
        row.ip_src = rec.ip_src;
        row.ip_dst = rec.ip_dst;
        row.ip_proto = rec.ip_proto;
        row.frame_len = rec.frame_len;
        row.tcp_flags = rec.tcp_flags;
        row.tcp_srcport = rec.tcp_srcport;
        row.tcp_dstport = rec.tcp_dstport;
        row.udp_srcport = rec.udp_srcport;
        row.udp_dstport = rec.udp_dstport;
        row.lost_segment = rec.lost_segment;
        rows.push_back(row);
    }
    return rows;
}

std::vector<DerivedFeatures> derive(const std::vector<BasicFeatures>& rows) {
    if (rows.empty()) throw EmptyInput("derive: no rows");

    const int64_t t0 = rows.front().frame_time;
    std::unordered_map<int64_t, uint32_t> per_sec, per_min;
    std::unordered_map<int64_t, uint32_t> per_ip_dst, per_proto;

    std::vector<int64_t> sec_of(rows.size()), min_of(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        int64_t rel = rows[i].frame_time - t0;
        sec_of[i] = rel / 1000000;
        min_of[i] = rel / 60000000;
        ++per_sec[sec_of[i]];
        ++per_min[min_of[i]];
        ++per_ip_dst[group_key(rows[i].ip_dst)];
        ++per_proto[group_key(rows[i].ip_proto)];
    }

    // Running max/min/mean over per-second counts: order the observed
    // seconds and build prefix statistics, then look each row's second up.
    std::vector<std::pair<int64_t, uint32_t>> seconds(per_sec.begin(), per_sec.end());
    std::sort(seconds.begin(), seconds.end());
    std::vector<uint32_t> prefix_max(seconds.size()), prefix_min(seconds.size());
    std::vector<double> prefix_mean(seconds.size());
    uint32_t run_max = 0, run_min = UINT32_MAX;
    double run_sum = 0.0;
    for (size_t i = 0; i < seconds.size(); ++i) {
        run_max = std::max(run_max, seconds[i].second);
        run_min = std::min(run_min, seconds[i].second);
        run_sum += seconds[i].second;
        prefix_max[i] = run_max;
        prefix_min[i] = run_min;
        prefix_mean[i] = run_sum / static_cast<double>(i + 1);
    }

    std::vector<DerivedFeatures> out(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        DerivedFeatures& d = out[i];
        d.frame_time_sec = sec_of[i];
        d.frame_time_min = min_of[i];
        d.packets_per_sec = per_sec[sec_of[i]];
        d.packets_per_minute = per_min[min_of[i]];
        d.packets_per_ip_dst = per_ip_dst[group_key(rows[i].ip_dst)];
        d.stats_packets_per_proto = per_proto[group_key(rows[i].ip_proto)];
        auto it = std::lower_bound(seconds.begin(), seconds.end(),
                                   std::make_pair(sec_of[i], 0u));
        size_t idx = static_cast<size_t>(it - seconds.begin());
        d.max_packets = prefix_max[idx];
        d.min_packets = prefix_min[idx];
        d.mean_packets = prefix_mean[idx];
    }
    return out;
}

LabeledDataset attach_labels(const std::vector<BasicFeatures>& basic,
                             const std::vector<DerivedFeatures>& derived,
                             const LabelSidecar& sidecar, const std::string& source_name) {
    if (basic.size() != derived.size())
        throw LengthMismatch("attach_labels: basic/derived row counts differ");

    std::unordered_map<uint32_t, size_t> row_of;
    row_of.reserve(basic.size());
    for (size_t i = 0; i < basic.size(); ++i) row_of[basic[i].frame_number] = i;

    std::vector<std::optional<Label>> assigned(basic.size());
    for (const auto& [frame, label] : sidecar.entries) {
        auto it = row_of.find(frame);
        if (it == row_of.end())
            throw UnknownFrameNumber("label for frame " + std::to_string(frame) +
                                     " which is not in the capture");
        if (assigned[it->second])
            throw DuplicateLabel("frame " + std::to_string(frame) + " labeled twice");
        assigned[it->second] = label;
    }

    LabeledDataset ds;
    ds.source_name = source_name;
    ds.rows.reserve(basic.size());
    for (size_t i = 0; i < basic.size(); ++i) {
        Label label;
        if (assigned[i]) {
            label = *assigned[i];
        } else if (sidecar.default_normal) {
            label = Label::normal;
        } else {
            throw MissingLabel("frame " + std::to_string(basic[i].frame_number) +
                               " has no label and the sidecar does not declare #default_normal");
        }
        ds.rows.push_back({basic[i], derived[i], label});
    }
    return ds;
}

FeatureMatrix encode(const LabeledDataset& dataset) {
    FeatureMatrix m;
    m.column_names.assign(kColumnNames.begin(), kColumnNames.end());
    m.rows.reserve(dataset.rows.size());
    m.labels.reserve(dataset.rows.size());

    auto& eth_src_col = m.encoding.columns["eth.src"];
    auto& eth_dst_col = m.encoding.columns["eth.dst"];
    auto& ip_src_col = m.encoding.columns["ip.src"];
    auto& ip_dst_col = m.encoding.columns["ip.dst"];

    for (const LabeledRow& r : dataset.rows) {
        const BasicFeatures& b = r.basic;
        const DerivedFeatures& d = r.derived;
        std::vector<double> row(kFeatureCount);
        row[0] = b.frame_number;
        row[1] = static_cast<double>(b.frame_time);
        row[2] = eth_src_col.encode(mac_to_string(b.eth_src));
        row[3] = eth_dst_col.encode(mac_to_string(b.eth_dst));
        row[4] = b.ip_src ? ip_src_col.encode(ipv4_to_string(*b.ip_src)) : EncodingMap::kMissing;
        row[5] = b.ip_dst ? ip_dst_col.encode(ipv4_to_string(*b.ip_dst)) : EncodingMap::kMissing;
        row[6] = b.ip_proto ? *b.ip_proto : EncodingMap::kMissing;
        row[7] = b.frame_len;
        row[8] = b.tcp_flags ? *b.tcp_flags : EncodingMap::kMissing;
        row[9] = b.tcp_srcport ? *b.tcp_srcport : EncodingMap::kMissing;
        row[10] = b.tcp_dstport ? *b.tcp_dstport : EncodingMap::kMissing;
        row[11] = b.udp_srcport ? *b.udp_srcport : EncodingMap::kMissing;
        row[12] = b.udp_dstport ? *b.udp_dstport : EncodingMap::kMissing;
        row[13] = b.lost_segment ? 1.0 : 0.0;
        row[14] = static_cast<double>(d.frame_time_min);
        row[15] = d.packets_per_minute;
        row[16] = static_cast<double>(d.frame_time_sec);
        row[17] = d.packets_per_sec;
        row[18] = d.packets_per_ip_dst;
        row[19] = d.stats_packets_per_proto;
        row[20] = d.max_packets;
        row[21] = d.min_packets;
        row[22] = d.mean_packets;
        m.rows.push_back(std::move(row));
        m.labels.push_back(r.label);
    }
    return m;
}

FeatureMatrix standardize(const FeatureMatrix& matrix, const std::vector<size_t>& fit_on) {
    if (fit_on.empty()) throw EmptyInput("standardize: empty fit set");
    const size_t d = matrix.width();

    Standardization st;
    st.mean.assign(d, 0.0);
    st.stddev.assign(d, 0.0);
    for (size_t j = 0; j < d; ++j) {
        double sum = 0.0;
        for (size_t i : fit_on) sum += matrix.rows[i][j];
        double mean = sum / static_cast<double>(fit_on.size());
        double var = 0.0;
        for (size_t i : fit_on) {
            double delta = matrix.rows[i][j] - mean;
            var += delta * delta;
        }
        var /= static_cast<double>(fit_on.size());
        double sd = std::sqrt(var);
        st.mean[j] = mean;
        st.stddev[j] = sd > 1e-12 ? sd : 0.0;
    }

    FeatureMatrix out = matrix;
    for (auto& row : out.rows) row = apply_standardization(st, row);
    out.standardization = std::move(st);
    return out;
}

std::vector<double> apply_standardization(const Standardization& st,
                                          const std::vector<double>& row) {
    if (row.size() != st.mean.size())
        throw DimensionMismatch("standardization mismatch: row has " +
                                std::to_string(row.size()) + " columns, statistics have " +
                                std::to_string(st.mean.size()));
    std::vector<double> out(row.size());
    for (size_t j = 0; j < row.size(); ++j)
        out[j] = st.stddev[j] > 0.0 ? (row[j] - st.mean[j]) / st.stddev[j] : 0.0;
    return out;
}

SplitIndices split(const std::vector<Label>& labels, double train_fraction, uint64_t seed,
                   bool stratified) {
    const size_t n = labels.size();
    if (n < 2) throw TooFewRows("split: need at least 2 rows");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw TooFewRows("split: train fraction must lie strictly between 0 and 1");

    auto take_count = [&](size_t group) {
        auto k = static_cast<size_t>(std::llround(train_fraction * static_cast<double>(group)));
        return std::min(std::max<size_t>(k, 1), group - 1);
    };

    Rng rng(seed);
    SplitIndices out;
    if (stratified) {
        std::vector<size_t> by_class[2];
        for (size_t i = 0; i < n; ++i)
            by_class[labels[i] == Label::anomalous ? 1 : 0].push_back(i);
        for (auto& group : by_class) {
            if (group.empty()) continue;
            if (group.size() < 2)
                throw TooFewRows("split: stratified mode needs at least 2 rows per class");
            shuffle(group, rng);
            size_t k = take_count(group.size());
            out.train.insert(out.train.end(), group.begin(), group.begin() + static_cast<ptrdiff_t>(k));
            out.test.insert(out.test.end(), group.begin() + static_cast<ptrdiff_t>(k), group.end());
        }
    } else {
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        shuffle(idx, rng);
        size_t k = take_count(n);
        out.train.assign(idx.begin(), idx.begin() + static_cast<ptrdiff_t>(k));
        out.test.assign(idx.begin() + static_cast<ptrdiff_t>(k), idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

void write_feature_csv(const LabeledDataset& dataset, std::ostream& out) {
    for (const std::string& name : kColumnNames) out << csv_escape(name) << ',';
    out << "label\n";

    char buf[64];
    for (const LabeledRow& r : dataset.rows) {
        const BasicFeatures& b = r.basic;
        const DerivedFeatures& d = r.derived;
        out << b.frame_number << ',' << b.frame_time << ','
            << mac_to_string(b.eth_src) << ',' << mac_to_string(b.eth_dst) << ','
            << (b.ip_src ? ipv4_to_string(*b.ip_src) : "") << ','
            << (b.ip_dst ? ipv4_to_string(*b.ip_dst) : "") << ','
            << opt_to_cell(b.ip_proto) << ',' << b.frame_len << ','
            << opt_to_cell(b.tcp_flags) << ',' << opt_to_cell(b.tcp_srcport) << ','
            << opt_to_cell(b.tcp_dstport) << ',' << opt_to_cell(b.udp_srcport) << ','
            << opt_to_cell(b.udp_dstport) << ',' << (b.lost_segment ? 1 : 0) << ','
            << d.frame_time_min << ',' << d.packets_per_minute << ','
            << d.frame_time_sec << ',' << d.packets_per_sec << ','
            << d.packets_per_ip_dst << ',' << d.stats_packets_per_proto << ','
            << d.max_packets << ',' << d.min_packets << ',';
        std::snprintf(buf, sizeof buf, "%.6f", d.mean_packets);
        out << buf << ',' << to_string(r.label) << '\n';
    }
}

LabeledDataset read_feature_csv(std::istream& in, const std::string& source_name) {
    std::string line;
    if (!std::getline(in, line)) throw CsvFormatError("feature csv: empty input");
    std::vector<std::string> header = csv_split(line);
    if (header.size() != kFeatureCount + 1)
        throw CsvFormatError("feature csv: expected " + std::to_string(kFeatureCount + 1) +
                             " columns, found " + std::to_string(header.size()));
    for (size_t i = 0; i < kFeatureCount; ++i)
        if (header[i] != kColumnNames[i])
            throw CsvFormatError("feature csv: column " + std::to_string(i + 1) + " is '" +
                                 header[i] + "', expected '" + kColumnNames[i] + "'");
    if (header.back() != "label") throw CsvFormatError("feature csv: final column must be 'label'");

    auto opt_u16 = [](const std::string& cell, const char* what) -> std::optional<uint16_t> {
        if (cell.empty()) return std::nullopt;
        return static_cast<uint16_t>(parse_int(cell, what));
    };

    LabeledDataset ds;
    ds.source_name = source_name;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells = csv_split(line);
        if (cells.size() != kFeatureCount + 1)
            throw CsvFormatError("feature csv: row with " + std::to_string(cells.size()) +
                                 " cells");
        LabeledRow r;
        BasicFeatures& b = r.basic;
        DerivedFeatures& d = r.derived;
        b.frame_number = static_cast<uint32_t>(parse_int(cells[0], "frame.number"));
        b.frame_time = parse_int(cells[1], "frame.time");
        b.eth_src = mac_from_string(cells[2]);
        b.eth_dst = mac_from_string(cells[3]);
        if (!cells[4].empty()) b.ip_src = ipv4_from_string(cells[4]);
        if (!cells[5].empty()) b.ip_dst = ipv4_from_string(cells[5]);
        if (!cells[6].empty()) b.ip_proto = static_cast<uint8_t>(parse_int(cells[6], "ip.proto"));
        b.frame_len = static_cast<uint32_t>(parse_int(cells[7], "frame.len"));
        if (!cells[8].empty()) b.tcp_flags = static_cast<uint8_t>(parse_int(cells[8], "tcp.flags"));
        b.tcp_srcport = opt_u16(cells[9], "tcp.srcport");
        b.tcp_dstport = opt_u16(cells[10], "tcp.dstport");
        b.udp_srcport = opt_u16(cells[11], "udp.srcport");
        b.udp_dstport = opt_u16(cells[12], "udp.dstport");
        b.lost_segment = parse_int(cells[13], "tcp.analysis.lost_segment") != 0;
        d.frame_time_min = parse_int(cells[14], "frame.time.min");
        d.packets_per_minute = static_cast<uint32_t>(parse_int(cells[15], "packets_per_minute"));
        d.frame_time_sec = parse_int(cells[16], "frame.time.sec");
        d.packets_per_sec = static_cast<uint32_t>(parse_int(cells[17], "packets_per_sec"));
        d.packets_per_ip_dst =
            static_cast<uint32_t>(parse_int(cells[18], "packets_per_ip.dst"));
        d.stats_packets_per_proto =
            static_cast<uint32_t>(parse_int(cells[19], "stats.packets_per_proto"));
        d.max_packets = static_cast<uint32_t>(parse_int(cells[20], "max_packets"));
        d.min_packets = static_cast<uint32_t>(parse_int(cells[21], "min_packets"));
        d.mean_packets = parse_double(cells[22], "mean_packets");
        r.label = parse_label(cells[23]);
        ds.rows.push_back(std::move(r));
    }
    return ds;
}

void write_feature_csv_file(const LabeledDataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    write_feature_csv(dataset, out);
}

LabeledDataset read_feature_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::string stem = path;
    if (auto slash = stem.find_last_of('/'); slash != std::string::npos) stem = stem.substr(slash + 1);
    if (auto dot = stem.find_last_of('.'); dot != std::string::npos) stem = stem.substr(0, dot);
    return read_feature_csv(in, stem);
}

void write_sidecar(const LabelSidecar& sidecar, std::ostream& out) {
    if (sidecar.default_normal) out << "#default_normal\n";
    out << "frame.number,label\n";
    for (const auto& [frame, label] : sidecar.entries)
        out << frame << ',' << to_string(label) << '\n';
}

LabelSidecar read_sidecar(std::istream& in) {
    LabelSidecar sc;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line == "#default_normal") sc.default_normal = true;
            continue;
        }
        if (!header_seen) {
            if (line != "frame.number,label")
                throw CsvFormatError("label sidecar: expected header 'frame.number,label'");
            header_seen = true;
            continue;
        }
        std::vector<std::string> cells = csv_split(line);
        if (cells.size() != 2) throw CsvFormatError("label sidecar: bad row '" + line + "'");
        sc.entries.emplace_back(static_cast<uint32_t>(parse_int(cells[0], "frame.number")),
                                parse_label(cells[1]));
    }
    if (!header_seen) throw CsvFormatError("label sidecar: missing header");
    return sc;
}

void write_sidecar_file(const LabelSidecar& sidecar, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    write_sidecar(sidecar, out);
}

LabelSidecar read_sidecar_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    return read_sidecar(in);
}

}  // namespace mbad::features
