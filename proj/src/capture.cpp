#include "mbad/capture.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <tuple>

namespace mbad::capture {

namespace {

constexpr uint32_t kMagicUsec = 0xa1b2c3d4;
constexpr uint32_t kMagicUsecSwapped = 0xd4c3b2a1;
constexpr uint32_t kMagicNsec = 0xa1b23c4d;
constexpr uint32_t kMagicNsecSwapped = 0x4d3cb2a1;

uint32_t load_u32(const uint8_t* p, bool swap) {
    uint32_t v;
    std::memcpy(&v, p, 4);
    if (swap) v = __builtin_bswap32(v);
    return v;
}

uint16_t load_u16_be(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] << 8 | p[1]);
}

uint32_t load_u32_be(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) << 24 | static_cast<uint32_t>(p[1]) << 16 |
           static_cast<uint32_t>(p[2]) << 8 | static_cast<uint32_t>(p[3]);
}

void put_u16_le(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32_le(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void warn(std::vector<DissectWarning>* sink, uint32_t frame, const char* msg) {
    if (sink) sink->push_back({frame, msg});
}

}  // namespace

RawCapture read_pcap(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 4) throw BadMagic("pcap: file shorter than a magic number");
    uint32_t raw_magic = load_u32(bytes.data(), false);
    bool swap = false;
    if (raw_magic == kMagicUsec) {
        swap = false;
    } else if (raw_magic == kMagicUsecSwapped) {
        swap = true;
    } else if (raw_magic == kMagicNsec || raw_magic == kMagicNsecSwapped) {
        throw BadMagic("pcap: nanosecond captures are not supported");
    } else {
        throw BadMagic("pcap: not a classic pcap file");
    }
    if (bytes.size() < 24) throw Truncated("pcap: truncated global header");

    uint32_t network = load_u32(bytes.data() + 20, swap);
    if (network != static_cast<uint32_t>(LinkType::ethernet))
        throw UnsupportedLinkType("pcap: link type " + std::to_string(network) +
                                  " (only Ethernet is supported)");

    RawCapture cap;
    size_t off = 24;
    while (off < bytes.size()) {
        if (bytes.size() - off < 16) throw Truncated("pcap: truncated record header");
        Frame f;
        f.ts_sec = load_u32(bytes.data() + off, swap);
        f.ts_usec = load_u32(bytes.data() + off + 4, swap);
        uint32_t incl_len = load_u32(bytes.data() + off + 8, swap);
        off += 16;
        if (bytes.size() - off < incl_len)
            throw Truncated("pcap: record promises " + std::to_string(incl_len) +
                            " bytes, " + std::to_string(bytes.size() - off) + " remain");
        f.bytes.assign(bytes.begin() + static_cast<ptrdiff_t>(off),
                       bytes.begin() + static_cast<ptrdiff_t>(off + incl_len));
        off += incl_len;
        cap.frames.push_back(std::move(f));
    }
    return cap;
}

RawCapture read_pcap_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return read_pcap(bytes);
}

std::vector<uint8_t> write_pcap(const RawCapture& capture) {
    std::vector<uint8_t> out;
    out.reserve(24 + capture.frames.size() * 16);
    put_u32_le(out, kMagicUsec);
    put_u16_le(out, 2);   // version major
    put_u16_le(out, 4);   // version minor
    put_u32_le(out, 0);   // thiszone
    put_u32_le(out, 0);   // sigfigs
    put_u32_le(out, 65535);
    put_u32_le(out, static_cast<uint32_t>(LinkType::ethernet));
    for (const Frame& f : capture.frames) {
        if (f.bytes.empty()) throw ConfigError("pcap: refusing to write an empty frame");
        put_u32_le(out, f.ts_sec);
        put_u32_le(out, f.ts_usec);
        put_u32_le(out, static_cast<uint32_t>(f.bytes.size()));
        put_u32_le(out, static_cast<uint32_t>(f.bytes.size()));
        out.insert(out.end(), f.bytes.begin(), f.bytes.end());
    }
    return out;
}

void write_pcap_file(const RawCapture& capture, const std::string& path) {
    std::vector<uint8_t> bytes = write_pcap(capture);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

PacketRecord dissect(const std::vector<uint8_t>& frame, int64_t timestamp_usec,
                     uint32_t ordinal, std::vector<DissectWarning>* warnings) {
    PacketRecord rec;
    rec.frame_number = ordinal;
    rec.frame_time = timestamp_usec;
    rec.frame_len = static_cast<uint32_t>(frame.size());

    if (frame.size() < 14) {
        warn(warnings, ordinal, "frame shorter than an Ethernet header");
        return rec;
    }

    uint64_t dst = 0, src = 0;
    for (int i = 0; i < 6; ++i) {
        dst = dst << 8 | frame[static_cast<size_t>(i)];
        src = src << 8 | frame[static_cast<size_t>(i) + 6];
    }
    rec.eth_dst = dst;
    rec.eth_src = src;
    uint16_t ethertype = load_u16_be(frame.data() + 12);

    if (ethertype == 0x86dd) {
        warn(warnings, ordinal, "IPv6 frame dissected to Ethernet level only");
        return rec;
    }
    if (ethertype != 0x0800) return rec;  // non-IPv4 upper layer, fields stay absent

    const uint8_t* ip = frame.data() + 14;
    size_t ip_avail = frame.size() - 14;
    if (ip_avail < 20) {
        warn(warnings, ordinal, "IPv4 header exceeds frame");
        return rec;
    }
    uint8_t ihl = static_cast<uint8_t>(ip[0] & 0x0f);
    size_t ip_hdr_len = static_cast<size_t>(ihl) * 4;
    if (ihl < 5 || ip_hdr_len > ip_avail) {
        warn(warnings, ordinal, "IPv4 header length exceeds frame");
        return rec;
    }
    uint16_t total_length = load_u16_be(ip + 2);
    size_t ip_payload_declared = 0;
    if (total_length < ip_hdr_len) {
        warn(warnings, ordinal, "IPv4 total length smaller than header");
    } else {
        ip_payload_declared = total_length - ip_hdr_len;
    }
    if (total_length > ip_avail) {
        warn(warnings, ordinal, "IPv4 total length exceeds frame");
        ip_payload_declared = ip_avail - ip_hdr_len;
    }
    rec.ip_proto = ip[9];
    rec.ip_src = load_u32_be(ip + 12);
    rec.ip_dst = load_u32_be(ip + 16);

    const uint8_t* l4 = ip + ip_hdr_len;
    size_t l4_avail = ip_avail - ip_hdr_len;

    if (*rec.ip_proto == 6) {
        if (l4_avail < 20) {
            warn(warnings, ordinal, "TCP header exceeds frame");
            return rec;
        }
        size_t data_offset = static_cast<size_t>(l4[12] >> 4) * 4;
        if (data_offset < 20 || data_offset > l4_avail) {
            warn(warnings, ordinal, "TCP data offset exceeds frame");
            return rec;
        }
        rec.tcp_srcport = load_u16_be(l4);
        rec.tcp_dstport = load_u16_be(l4 + 2);
        rec.tcp_seq = load_u32_be(l4 + 4);
        rec.tcp_flags = l4[13];
        size_t payload_len =
            ip_payload_declared >= data_offset ? ip_payload_declared - data_offset : 0;
        size_t payload_avail = std::min(payload_len, l4_avail - data_offset);
        rec.tcp_len = static_cast<uint32_t>(payload_len);

        bool modbus_port = *rec.tcp_srcport == 502 || *rec.tcp_dstport == 502;
        if (modbus_port && payload_len > 0) {
            const uint8_t* mb = l4 + data_offset;
            if (payload_avail < 8) {
                warn(warnings, ordinal, "Modbus ADU shorter than MBAP header + function code");
            } else {
                ModbusAdu adu;
                adu.transaction_id = load_u16_be(mb);
                adu.protocol_id = load_u16_be(mb + 2);
                adu.length = load_u16_be(mb + 4);
                adu.unit_id = mb[6];
                adu.function_code = mb[7];
                size_t data_declared = adu.length >= 2 ? adu.length - 2u : 0u;
                size_t data_avail = payload_avail - 8;
                if (data_declared > data_avail) {
                    warn(warnings, ordinal, "Modbus length field exceeds frame");
                    data_declared = data_avail;
                }
                adu.payload.assign(mb + 8, mb + 8 + data_declared);
                rec.modbus = std::move(adu);
            }
        }
    } else if (*rec.ip_proto == 17) {
        if (l4_avail < 8) {
            warn(warnings, ordinal, "UDP header exceeds frame");
            return rec;
        }
        rec.udp_srcport = load_u16_be(l4);
        rec.udp_dstport = load_u16_be(l4 + 2);
    }
    return rec;
}

DissectedCapture dissect_capture(const RawCapture& capture) {
    DissectedCapture out;
    out.records.reserve(capture.frames.size());
    uint32_t ordinal = 0;
    for (const Frame& f : capture.frames) {
        ++ordinal;
        out.records.push_back(dissect(f.bytes, f.time_usec(), ordinal, &out.warnings));
    }
    return out;
}

void track_lost_segments(std::vector<PacketRecord>& records) {
    using FlowKey = std::tuple<uint32_t, uint16_t, uint32_t, uint16_t>;
    std::map<FlowKey, uint64_t> expected_next;  // high-water mark per directional flow

    for (PacketRecord& rec : records) {
        rec.lost_segment = false;
        if (!rec.has_tcp() || !rec.ip_src || !rec.tcp_seq) continue;
        FlowKey key{*rec.ip_src, *rec.tcp_srcport, *rec.ip_dst, *rec.tcp_dstport};

        uint64_t seq = *rec.tcp_seq;
        uint64_t seg_len = rec.tcp_len.value_or(0);
        uint8_t flags = rec.tcp_flags.value_or(0);
        // SYN and FIN each consume one sequence number
        if (flags & tcpflag::syn) seg_len += 1;
        if (flags & tcpflag::fin) seg_len += 1;

        auto it = expected_next.find(key);
        if (it == expected_next.end()) {
            expected_next[key] = seq + seg_len;
            continue;
        }
        if (seq > it->second) rec.lost_segment = true;
        it->second = std::max(it->second, seq + seg_len);
    }
}

}  // namespace mbad::capture

namespace mbad {

std::string mac_to_string(uint64_t mac) {
    char buf[18];
    std::snprintf(buf, sizeof buf, "%02x:%02x:%02x:%02x:%02x:%02x",
                  static_cast<unsigned>(mac >> 40 & 0xff), static_cast<unsigned>(mac >> 32 & 0xff),
                  static_cast<unsigned>(mac >> 24 & 0xff), static_cast<unsigned>(mac >> 16 & 0xff),
                  static_cast<unsigned>(mac >> 8 & 0xff), static_cast<unsigned>(mac & 0xff));
    return buf;
}

uint64_t mac_from_string(const std::string& s) {
    unsigned b[6];
    if (std::sscanf(s.c_str(), "%x:%x:%x:%x:%x:%x", &b[0], &b[1], &b[2], &b[3], &b[4], &b[5]) != 6)
        throw ConfigError("bad hardware address: " + s);
    uint64_t mac = 0;
    for (unsigned v : b) {
        if (v > 0xff) throw ConfigError("bad hardware address: " + s);
        mac = mac << 8 | v;
    }
    return mac;
}

std::string ipv4_to_string(uint32_t ip) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", ip >> 24 & 0xff, ip >> 16 & 0xff,
                  ip >> 8 & 0xff, ip & 0xff);
    return buf;
}

uint32_t ipv4_from_string(const std::string& s) {
    unsigned b[4];
    if (std::sscanf(s.c_str(), "%u.%u.%u.%u", &b[0], &b[1], &b[2], &b[3]) != 4)
        throw ConfigError("bad IPv4 address: " + s);
    uint32_t ip = 0;
    for (unsigned v : b) {
        if (v > 255) throw ConfigError("bad IPv4 address: " + s);
        ip = ip << 8 | v;
    }
    return ip;
}

}  // namespace mbad
