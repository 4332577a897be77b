#include "mbad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mbad/rng.hpp"

namespace mbad::synth {

namespace {

using Bytes = std::vector<uint8_t>;

constexpr uint64_t kDefaultMtuMac = 0x001d9cc7b001ULL;
constexpr uint32_t kDefaultMtuIp = 0xc0a80a0a;   // 192.168.10.10
constexpr uint64_t kDefaultRtuMacBase = 0x001d9cc80000ULL;
constexpr uint32_t kDefaultRtuIpBase = 0xc0a80a65;  // 192.168.10.101
constexpr uint64_t kDefaultAttackerMac = 0x000c295a5a5aULL;
constexpr uint32_t kDefaultAttackerIp = 0xc0a80ac8;  // 192.168.10.200

constexpr uint16_t kMtuPortBase = 49152;
constexpr uint16_t kFakeFlowPortBase = 51000;

void put_u16_be(Bytes& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_u32_be(Bytes& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint16_t ones_complement_sum(const uint8_t* data, size_t len, uint32_t acc) {
    for (size_t i = 0; i + 1 < len; i += 2) acc += static_cast<uint32_t>(data[i]) << 8 | data[i + 1];
    if (len & 1) acc += static_cast<uint32_t>(data[len - 1]) << 8;
    while (acc >> 16) acc = (acc & 0xffff) + (acc >> 16);
    return static_cast<uint16_t>(acc);
}

struct TcpSegment {
    HostAddress src;
    HostAddress dst;
    uint16_t srcport = 0;
    uint16_t dstport = 0;
    uint32_t seq = 0;
    uint32_t ack = 0;
    uint8_t flags = 0;
    uint16_t ip_id = 0;
    Bytes payload;
};

Bytes build_frame(const TcpSegment& seg) {
    Bytes frame;
    frame.reserve(64 + seg.payload.size());

    // Ethernet
    for (int i = 5; i >= 0; --i) frame.push_back(static_cast<uint8_t>(seg.dst.mac >> (8 * i)));
    for (int i = 5; i >= 0; --i) frame.push_back(static_cast<uint8_t>(seg.src.mac >> (8 * i)));
    put_u16_be(frame, 0x0800);

    // IPv4
    size_t ip_off = frame.size();
    uint16_t total_len = static_cast<uint16_t>(20 + 20 + seg.payload.size());
    frame.push_back(0x45);
    frame.push_back(0x00);
    put_u16_be(frame, total_len);
    put_u16_be(frame, seg.ip_id);
    put_u16_be(frame, 0x4000);  // don't fragment
    frame.push_back(64);        // ttl
    frame.push_back(6);         // tcp
    put_u16_be(frame, 0);       // checksum placeholder
    put_u32_be(frame, seg.src.ip);
    put_u32_be(frame, seg.dst.ip);
    uint16_t ip_sum = ~ones_complement_sum(frame.data() + ip_off, 20, 0) & 0xffff;
    frame[ip_off + 10] = static_cast<uint8_t>(ip_sum >> 8);
    frame[ip_off + 11] = static_cast<uint8_t>(ip_sum);

    // TCP
    size_t tcp_off = frame.size();
    put_u16_be(frame, seg.srcport);
    put_u16_be(frame, seg.dstport);
    put_u32_be(frame, seg.seq);
    put_u32_be(frame, seg.ack);
    frame.push_back(0x50);  // data offset 5
    frame.push_back(seg.flags);
    put_u16_be(frame, 8192);  // window
    put_u16_be(frame, 0);     // checksum placeholder
    put_u16_be(frame, 0);     // urgent
    frame.insert(frame.end(), seg.payload.begin(), seg.payload.end());

    Bytes pseudo;
    put_u32_be(pseudo, seg.src.ip);
    put_u32_be(pseudo, seg.dst.ip);
    pseudo.push_back(0);
    pseudo.push_back(6);
    put_u16_be(pseudo, static_cast<uint16_t>(20 + seg.payload.size()));
    uint32_t acc = ones_complement_sum(pseudo.data(), pseudo.size(), 0);
    uint16_t tcp_sum =
        ~ones_complement_sum(frame.data() + tcp_off, frame.size() - tcp_off, acc) & 0xffff;
    frame[tcp_off + 16] = static_cast<uint8_t>(tcp_sum >> 8);
    frame[tcp_off + 17] = static_cast<uint8_t>(tcp_sum);

    // pad to the Ethernet minimum
    while (frame.size() < 60) frame.push_back(0);
    return frame;
}

Bytes mbap_request_read(uint16_t tid, uint8_t unit, uint16_t start, uint16_t quantity) {
    Bytes p;
    put_u16_be(p, tid);
    put_u16_be(p, 0);  // protocol id
    put_u16_be(p, 6);  // unit + fc + 4 data bytes
    p.push_back(unit);
    p.push_back(3);  // read holding registers
    put_u16_be(p, start);
    put_u16_be(p, quantity);
    return p;
}

Bytes mbap_response_read(uint16_t tid, uint8_t unit, const std::vector<uint16_t>& regs) {
    Bytes p;
    put_u16_be(p, tid);
    put_u16_be(p, 0);
    put_u16_be(p, static_cast<uint16_t>(3 + 2 * regs.size()));
    p.push_back(unit);
    p.push_back(3);
    p.push_back(static_cast<uint8_t>(2 * regs.size()));
    for (uint16_t r : regs) put_u16_be(p, r);
    return p;
}

Bytes mbap_write_single(uint16_t tid, uint8_t unit, uint16_t addr, uint16_t value) {
    Bytes p;
    put_u16_be(p, tid);
    put_u16_be(p, 0);
    put_u16_be(p, 6);
    p.push_back(unit);
    p.push_back(6);  // write single register
    put_u16_be(p, addr);
    put_u16_be(p, value);
    return p;
}

struct PendingFrame {
    int64_t t_usec = 0;
    Bytes bytes;
    bool attack = false;
};

struct PollRecord {
    int64_t t_req = 0;
    uint32_t req_seq = 0;
    uint32_t req_ack = 0;
    Bytes request_frame;
};

// State of one MTU<->RTU polling session.
struct Flow {
    HostAddress mtu;
    HostAddress rtu;
    uint16_t mtu_port = 0;
    uint16_t rtu_port = 502;
    uint32_t mtu_seq = 0;
    uint32_t rtu_seq = 0;
    uint16_t tid = 0;
    uint16_t ip_id = 0;
    std::vector<PollRecord> polls;  // history, for insider attacks

    // most recent poll at or before t; insider attacks must not precede
    // the first poll of their target flow
    const PollRecord& poll_at(int64_t t) const {
        const PollRecord* found = nullptr;
        for (const PollRecord& p : polls) {
            if (p.t_req > t) break;
            found = &p;
        }
        if (!found) throw InvalidWindow("insider attack before the first poll of its target flow");
        return *found;
    }
};

struct PauseWindow {
    int64_t begin_sec;
    int64_t end_sec;  // exclusive
    bool contains(int64_t t_usec) const {
        int64_t sec = t_usec / 1000000;
        return sec >= begin_sec && sec < end_sec;
    }
};

double interval_at(const ScenarioConfig& config, double t_sec) {
    double interval = config.polling_interval_ms;
    for (const RateChange& rc : config.rate_changes)
        if (t_sec >= rc.at_second) interval = rc.polling_interval_ms;
    return interval;
}

void validate(const ScenarioConfig& config, const std::vector<AttackSpec>& attacks) {
    if (config.rtu_count < 1) throw ConfigError("scenario: rtu_count must be at least 1");
    if (config.polling_interval_ms <= 0.0)
        throw ConfigError("scenario: polling interval must be positive");
    if (config.duration_seconds <= 0.0) throw ConfigError("scenario: duration must be positive");
    if (config.jitter_ms < 0.0 || config.jitter_ms >= config.polling_interval_ms)
        throw ConfigError("scenario: jitter must lie in [0, polling interval)");
    for (const RateChange& rc : config.rate_changes)
        if (rc.polling_interval_ms <= 0.0 || rc.at_second < 0.0 ||
            rc.at_second > config.duration_seconds)
            throw ConfigError("scenario: bad rate change");

    double min_interval = config.polling_interval_ms;
    for (const RateChange& rc : config.rate_changes)
        min_interval = std::min(min_interval, rc.polling_interval_ms);
    double steady_rate = 2.0 * config.rtu_count / (min_interval / 1000.0);

    for (const AttackSpec& a : attacks) {
        if (a.start_second < 0.0 || a.duration_seconds <= 0.0 ||
            a.start_second + a.duration_seconds > config.duration_seconds)
            throw InvalidWindow("attack window outside the capture");
        if (a.kind == AttackSpec::Kind::scan_burst && a.intensity <= steady_rate)
            throw InvalidWindow("scan burst intensity must exceed the steady packet rate");
        if (a.intensity <= 0.0) throw InvalidWindow("attack intensity must be positive");
    }
}

}  // namespace

GeneratedCapture generate(const ScenarioConfig& config, const std::vector<AttackSpec>& attacks) {
    validate(config, attacks);
    Rng rng(config.seed);

    HostAddress mtu = config.mtu_address;
    if (mtu.mac == 0 && mtu.ip == 0) mtu = {kDefaultMtuMac, kDefaultMtuIp};
    std::vector<HostAddress> rtus = config.rtu_addresses;
    for (size_t i = rtus.size(); i < static_cast<size_t>(config.rtu_count); ++i)
        rtus.push_back({kDefaultRtuMacBase + i + 1, kDefaultRtuIpBase + static_cast<uint32_t>(i)});

    std::vector<PauseWindow> pauses;
    for (const AttackSpec& a : attacks)
        if (a.pause_polling)
            pauses.push_back({static_cast<int64_t>(std::floor(a.start_second)),
                              static_cast<int64_t>(std::ceil(a.start_second + a.duration_seconds))});
    auto paused = [&pauses](int64_t t_usec) {
        for (const PauseWindow& w : pauses)
            if (w.contains(t_usec)) return true;
        return false;
    };

    const int64_t duration_usec = static_cast<int64_t>(config.duration_seconds * 1e6);
    std::vector<PendingFrame> frames;
    std::vector<Flow> flows(rtus.size());

    // per-RTU session handshakes, spread over the first second so the
    // opening second carries roughly the steady per-second packet count
    for (size_t i = 0; i < rtus.size(); ++i) {
        Flow& flow = flows[i];
        flow.mtu = mtu;
        flow.rtu = rtus[i];
        flow.mtu_port = static_cast<uint16_t>(kMtuPortBase + i);
        flow.rtu_port = config.base_port;
        flow.mtu_seq = 1000 + static_cast<uint32_t>(rng.next_below(900000));
        flow.rtu_seq = 1000 + static_cast<uint32_t>(rng.next_below(900000));

        int64_t t = static_cast<int64_t>(i) * (1000000 / static_cast<int64_t>(rtus.size()));
        TcpSegment syn{mtu, rtus[i], flow.mtu_port, flow.rtu_port,
                       flow.mtu_seq, 0, capture::tcpflag::syn, flow.ip_id++, {}};
        frames.push_back({t, build_frame(syn), false});
        flow.mtu_seq += 1;

        TcpSegment synack{rtus[i], mtu, flow.rtu_port, flow.mtu_port,
                          flow.rtu_seq, flow.mtu_seq, capture::tcpflag::syn | capture::tcpflag::ack,
                          flow.ip_id++, {}};
        frames.push_back({t + 250, build_frame(synack), false});
        flow.rtu_seq += 1;

        TcpSegment ack{mtu, rtus[i], flow.mtu_port, flow.rtu_port,
                       flow.mtu_seq, flow.rtu_seq, capture::tcpflag::ack, flow.ip_id++, {}};
        frames.push_back({t + 500, build_frame(ack), false});
    }

    // steady polling
    const uint16_t quantity = 10;
    for (size_t i = 0; i < rtus.size(); ++i) {
        Flow& flow = flows[i];
        int poll_count = 0;
        double phase_ms = config.polling_interval_ms * (static_cast<double>(i) + 1.0) /
                          static_cast<double>(rtus.size() + 1);
        double t_ms = 1000.0 + phase_ms;  // polling begins after session setup
        while (true) {
            double interval = interval_at(config, t_ms / 1000.0);
            double jitter = config.jitter_ms > 0.0
                                ? rng.next_range(-config.jitter_ms, config.jitter_ms)
                                : 0.0;
            double delay_ms = rng.next_range(1.5, 6.0);
            std::vector<uint16_t> regs(quantity);
            for (uint16_t& r : regs) r = static_cast<uint16_t>(rng.next_below(65536));

            int64_t t_req = static_cast<int64_t>((t_ms + jitter) * 1000.0);
            int64_t t_resp = t_req + static_cast<int64_t>(delay_ms * 1000.0);
            if (t_req >= duration_usec) break;

            if (!paused(t_req) && !paused(t_resp)) {
                ++poll_count;
                flow.tid += 1;
                TcpSegment req{mtu, flow.rtu, flow.mtu_port, flow.rtu_port,
                               flow.mtu_seq, flow.rtu_seq, capture::tcpflag::psh | capture::tcpflag::ack,
                               flow.ip_id++, mbap_request_read(flow.tid, static_cast<uint8_t>(i + 1),
                                                               0, quantity)};
                Bytes req_bytes = build_frame(req);
                flow.polls.push_back({t_req, flow.mtu_seq, flow.rtu_seq, req_bytes});
                frames.push_back({t_req, std::move(req_bytes), false});
                flow.mtu_seq += static_cast<uint32_t>(req.payload.size());

                TcpSegment resp{flow.rtu, mtu, flow.rtu_port, flow.mtu_port,
                                flow.rtu_seq, flow.mtu_seq,
                                capture::tcpflag::psh | capture::tcpflag::ack, flow.ip_id++,
                                mbap_response_read(flow.tid, static_cast<uint8_t>(i + 1), regs)};
                bool drop = config.loss_every_n > 0 && poll_count % config.loss_every_n == 0;
                if (!drop) frames.push_back({t_resp, build_frame(resp), false});
                flow.rtu_seq += static_cast<uint32_t>(resp.payload.size());
            }
            t_ms += interval;
        }
    }

    // attack traffic
    int fake_flow_index = 0;
    for (const AttackSpec& spec : attacks) {
        HostAddress attacker = spec.attacker.value_or(HostAddress{kDefaultAttackerMac,
                                                                  kDefaultAttackerIp});
        bool insider = attacker == mtu;
        int64_t start = static_cast<int64_t>(spec.start_second * 1e6);
        int64_t span = static_cast<int64_t>(spec.duration_seconds * 1e6);

        if (spec.kind == AttackSpec::Kind::scan_burst) {
            auto count = static_cast<int>(std::llround(spec.intensity * spec.duration_seconds));
            for (int p = 0; p < count; ++p) {
                int64_t t = start + (2 * static_cast<int64_t>(p) + 1) * span / (2 * count);
                size_t target = static_cast<size_t>(p) % rtus.size();
                if (insider) {
                    // replay storm: duplicates of the target flow's most
                    // recent request, header-identical to steady traffic
                    // and sequence-neutral for the loss tracker
                    frames.push_back({t, flows[target].poll_at(t).request_frame, true});
                } else {
                    uint16_t dport = spec.sweep_ports
                                         ? static_cast<uint16_t>(1024 + p % 1024)
                                         : config.base_port;
                    TcpSegment probe{attacker, rtus[target],
                                     static_cast<uint16_t>(40000 + p % 2000), dport,
                                     1000 + static_cast<uint32_t>(rng.next_below(900000)), 0,
                                     capture::tcpflag::syn,
                                     static_cast<uint16_t>(p), {}};
                    frames.push_back({t, build_frame(probe), true});
                }
            }
        } else {  // fake_command
            auto count = static_cast<int>(std::llround(spec.intensity));
            uint32_t seq = 1000 + static_cast<uint32_t>(rng.next_below(900000));
            uint16_t srcport = static_cast<uint16_t>(kFakeFlowPortBase + fake_flow_index++);
            uint16_t ip_id = 1;
            for (int p = 0; p < count; ++p) {
                int64_t t = start + (2 * static_cast<int64_t>(p) + 1) * span / (2 * count);
                size_t target = static_cast<size_t>(p) % rtus.size();
                uint16_t addr = static_cast<uint16_t>(rng.next_below(16));
                uint16_t value = static_cast<uint16_t>(rng.next_below(65536));
                if (insider) {
                    // spoofed write on the live session, reusing the last
                    // request's sequence number so no loss flag is raised
                    Flow& flow = flows[target];
                    const PollRecord& at = flow.poll_at(t);
                    TcpSegment cmd{mtu, flow.rtu, flow.mtu_port, flow.rtu_port,
                                   at.req_seq, at.req_ack,
                                   capture::tcpflag::psh | capture::tcpflag::ack,
                                   static_cast<uint16_t>(0x7000 + p),
                                   mbap_write_single(static_cast<uint16_t>(0x7000 + p),
                                                     static_cast<uint8_t>(target + 1), addr,
                                                     value)};
                    frames.push_back({t, build_frame(cmd), true});
                } else {
                    TcpSegment cmd{attacker, rtus[target], srcport, config.base_port, seq, 1,
                                   capture::tcpflag::psh | capture::tcpflag::ack, ip_id++,
                                   mbap_write_single(static_cast<uint16_t>(0x7000 + p),
                                                     static_cast<uint8_t>(target + 1), addr,
                                                     value)};
                    seq += static_cast<uint32_t>(cmd.payload.size());
                    frames.push_back({t, build_frame(cmd), true});
                }
            }
        }
    }

    std::stable_sort(frames.begin(), frames.end(),
                     [](const PendingFrame& a, const PendingFrame& b) { return a.t_usec < b.t_usec; });

    GeneratedCapture out;
    out.sidecar.default_normal = true;
    out.capture.frames.reserve(frames.size());
    uint32_t frame_number = 0;
    for (PendingFrame& pf : frames) {
        ++frame_number;
        capture::Frame f;
        int64_t abs_usec = config.start_epoch * 1000000 + pf.t_usec;
        f.ts_sec = static_cast<uint32_t>(abs_usec / 1000000);
        f.ts_usec = static_cast<uint32_t>(abs_usec % 1000000);
        f.bytes = std::move(pf.bytes);
        out.capture.frames.push_back(std::move(f));
        if (pf.attack) out.sidecar.entries.emplace_back(frame_number, Label::anomalous);
    }
    return out;
}

GeneratedCapture mix(const std::vector<GeneratedCapture>& parts) {
    if (parts.empty()) throw EmptyInput("mix: no captures");

    GeneratedCapture out;
    out.sidecar.default_normal = true;
    bool have_end = false;
    int64_t prev_end = 0;

    for (const GeneratedCapture& part : parts) {
        uint32_t base = static_cast<uint32_t>(out.capture.frames.size());
        int64_t shift = 0;
        if (!part.capture.frames.empty()) {
            if (have_end) shift = prev_end - part.capture.frames.front().time_usec();
            prev_end = part.capture.frames.back().time_usec() + shift;
            have_end = true;
        }
        for (const capture::Frame& f : part.capture.frames) {
            capture::Frame shifted = f;
            int64_t t = f.time_usec() + shift;
            shifted.ts_sec = static_cast<uint32_t>(t / 1000000);
            shifted.ts_usec = static_cast<uint32_t>(t % 1000000);
            out.capture.frames.push_back(std::move(shifted));
        }
        if (!part.sidecar.default_normal)
            throw ConfigError("mix: parts must carry default_normal sidecars");
        for (const auto& [frame, label] : part.sidecar.entries)
            out.sidecar.entries.emplace_back(base + frame, label);
    }
    return out;
}

namespace {

using nlohmann::json;

HostAddress parse_host(const json& j) {
    return {mac_from_string(j.at("mac").get<std::string>()),
            ipv4_from_string(j.at("ip").get<std::string>())};
}

ScenarioPart parse_part(const json& j) {
    ScenarioPart part;
    const json& sc = j.at("scenario");
    ScenarioConfig& c = part.config;
    c.rtu_count = sc.value("rtu_count", c.rtu_count);
    c.duration_seconds = sc.value("duration_seconds", c.duration_seconds);
    c.polling_interval_ms = sc.value("polling_interval_ms", c.polling_interval_ms);
    c.base_port = sc.value("base_port", c.base_port);
    c.jitter_ms = sc.value("jitter_ms", c.jitter_ms);
    c.seed = sc.value("seed", c.seed);
    c.start_epoch = sc.value("start_epoch", c.start_epoch);
    c.loss_every_n = sc.value("loss_every_n", c.loss_every_n);
    if (sc.contains("mtu")) c.mtu_address = parse_host(sc.at("mtu"));
    if (sc.contains("rtus"))
        for (const json& h : sc.at("rtus")) c.rtu_addresses.push_back(parse_host(h));
    if (sc.contains("rate_changes"))
        for (const json& rc : sc.at("rate_changes"))
            c.rate_changes.push_back({rc.at("at_second").get<double>(),
                                      rc.at("polling_interval_ms").get<double>()});

    if (j.contains("attacks")) {
        for (const json& ja : j.at("attacks")) {
            AttackSpec a;
            std::string kind = ja.at("kind").get<std::string>();
            if (kind == "scan_burst") a.kind = AttackSpec::Kind::scan_burst;
            else if (kind == "fake_command") a.kind = AttackSpec::Kind::fake_command;
            else throw ConfigError("scenario: unknown attack kind '" + kind + "'");
            a.start_second = ja.at("start_second").get<double>();
            a.duration_seconds = ja.at("duration_seconds").get<double>();
            a.intensity = ja.at("intensity").get<double>();
            if (ja.contains("attacker")) a.attacker = parse_host(ja.at("attacker"));
            a.pause_polling = ja.value("pause_polling", a.pause_polling);
            a.sweep_ports = ja.value("sweep_ports", a.sweep_ports);
            part.attacks.push_back(a);
        }
    }
    return part;
}

}  // namespace

ScenarioSpec parse_scenario(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario file: ") + e.what());
    }
    try {
        ScenarioSpec spec;
        if (j.contains("mix")) {
            for (const json& part : j.at("mix")) spec.parts.push_back(parse_part(part));
            if (spec.parts.empty()) throw ConfigError("scenario file: empty mix");
        } else {
            spec.parts.push_back(parse_part(j));
        }
        return spec;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario file: ") + e.what());
    }
}

ScenarioSpec load_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_scenario(text);
}

GeneratedCapture run_scenario(const ScenarioSpec& spec, std::optional<uint64_t> seed_override) {
    std::vector<GeneratedCapture> parts;
    parts.reserve(spec.parts.size());
    for (size_t i = 0; i < spec.parts.size(); ++i) {
        ScenarioConfig config = spec.parts[i].config;
        if (seed_override)
            config.seed = spec.parts.size() > 1 ? derive_seed(*seed_override, i) : *seed_override;
        parts.push_back(generate(config, spec.parts[i].attacks));
    }
    return parts.size() == 1 ? std::move(parts.front()) : mix(parts);
}

}  // namespace mbad::synth
