#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mbad/common.hpp"

namespace mbad::capture {

enum class LinkType : uint32_t { ethernet = 1 };
enum class TimeResolution { microsecond };

struct Frame {
    uint32_t ts_sec = 0;
    uint32_t ts_usec = 0;
    std::vector<uint8_t> bytes;

    int64_t time_usec() const {
        return static_cast<int64_t>(ts_sec) * 1000000 + ts_usec;
    }
    bool operator==(const Frame&) const = default;
};

// One classic-pcap capture held in memory. Well-formed Ethernet captures
// have non-decreasing timestamps and frames of at least 14 bytes; reading
// tolerates violations (real captures contain garbage frames) and the
// dissector degrades per frame instead of failing.
struct RawCapture {
    LinkType link_type = LinkType::ethernet;
    TimeResolution time_resolution = TimeResolution::microsecond;
    std::vector<Frame> frames;

    bool operator==(const RawCapture&) const = default;
};

// Modbus/TCP application header plus the PDU payload after the function
// code. The length field counts unit id + function code + payload.
struct ModbusAdu {
    uint16_t transaction_id = 0;
    uint16_t protocol_id = 0;
    uint16_t length = 0;
    uint8_t unit_id = 0;
    uint8_t function_code = 0;
    std::vector<uint8_t> payload;

    bool operator==(const ModbusAdu&) const = default;
};

// One dissected frame. Optional fields are present exactly when the
// corresponding layer was found: tcp_* xor udp_*, or neither.
struct PacketRecord {
    uint32_t frame_number = 0;  // 1-based, dense within a capture
    int64_t frame_time = 0;     // epoch microseconds
    uint32_t frame_len = 0;     // on-wire length
    uint64_t eth_src = 0;
    uint64_t eth_dst = 0;
    std::optional<uint32_t> ip_src;
    std::optional<uint32_t> ip_dst;
    std::optional<uint8_t> ip_proto;
    std::optional<uint16_t> tcp_srcport;
    std::optional<uint16_t> tcp_dstport;
    std::optional<uint8_t> tcp_flags;
    std::optional<uint32_t> tcp_seq;
    std::optional<uint32_t> tcp_len;  // payload bytes, for loss tracking
    std::optional<uint16_t> udp_srcport;
    std::optional<uint16_t> udp_dstport;
    std::optional<ModbusAdu> modbus;
    bool lost_segment = false;

    bool has_tcp() const { return tcp_srcport.has_value(); }
    bool has_udp() const { return udp_srcport.has_value(); }
};

struct DissectWarning {
    uint32_t frame_number;
    std::string message;
};

struct DissectedCapture {
    std::vector<PacketRecord> records;
    std::vector<DissectWarning> warnings;
};

// TCP flag bits (byte 13 of the TCP header).
namespace tcpflag {
constexpr uint8_t fin = 0x01;
constexpr uint8_t syn = 0x02;
constexpr uint8_t rst = 0x04;
constexpr uint8_t psh = 0x08;
constexpr uint8_t ack = 0x10;
}  // namespace tcpflag

// Classic pcap reader. Accepts both byte orders of the microsecond magic
// 0xA1B2C3D4; link type must be Ethernet.
// Throws BadMagic, Truncated, UnsupportedLinkType.
RawCapture read_pcap(const std::vector<uint8_t>& bytes);
RawCapture read_pcap_file(const std::string& path);

// Classic pcap writer: little-endian, microsecond magic, version 2.4,
// Ethernet. read_pcap(write_pcap(c)) == c.
std::vector<uint8_t> write_pcap(const RawCapture& capture);
void write_pcap_file(const RawCapture& capture, const std::string& path);

// Dissect a single frame. Never throws on frames of any content; layers
// that fail to parse are left absent and a warning is appended to
// `warnings` when non-null. lost_segment is left false here; see
// track_lost_segments.
PacketRecord dissect(const std::vector<uint8_t>& frame_bytes, int64_t timestamp_usec,
                     uint32_t ordinal, std::vector<DissectWarning>* warnings = nullptr);

// Dissect every frame of a capture in order.
DissectedCapture dissect_capture(const RawCapture& capture);

// Flag packets whose TCP sequence number jumps past the running expected
// next-sequence value of their directional flow (src addr, src port,
// dst addr, dst port). Retransmissions and out-of-order segments below
// the high-water mark are not flagged. Pure function of the input order.
void track_lost_segments(std::vector<PacketRecord>& records);

}  // namespace mbad::capture
