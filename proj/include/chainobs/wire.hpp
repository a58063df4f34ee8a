#pragma once

// Minimal Bitcoin P2P wire codec: framing, CompactSize, version, verack,
// getaddr, addr, ping and pong.

#include "chainobs/bytes.hpp"
#include "chainobs/endpoint.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace chainobs::wire {

using Magic = std::array<std::uint8_t, 4>;

/// On-wire byte order.
inline constexpr Magic kMainnetMagic{0xf9, 0xbe, 0xb4, 0xd9};
inline constexpr Magic kSimnetMagic{0xfa, 0xce, 0xb0, 0x0c};

inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::size_t kCommandSize = 12;
inline constexpr std::uint32_t kMaxPayloadSize = 4 * 1024 * 1024;
inline constexpr std::size_t kMaxAddrEntries = 1000;
inline constexpr std::size_t kMaxUserAgentLength = 256;
inline constexpr std::int32_t kProtocolVersion = 70015;

inline constexpr std::uint64_t kNodeNetwork = 1;
inline constexpr std::uint64_t kNodeWitness = 1 << 3;
inline constexpr std::uint64_t kNodeNetworkLimited = 1 << 10;

enum class Errc {
    CommandTooLong,
    BadCommand,
    BadMagic,
    BadChecksum,
    Truncated,
    OversizedPayload,
    NonCanonical,
    TooManyAddrEntries,
    UserAgentTooLong,
};

std::string_view to_string(Errc code);

class WireError : public std::runtime_error {
public:
    explicit WireError(Errc code);
    Errc code() const { return code_; }

private:
    Errc code_;
};

struct Message {
    std::string command;
    Bytes payload;

    bool operator==(const Message&) const = default;
};

struct DecodedFrame {
    Message message;
    std::size_t frame_size = 0; ///< header + payload bytes consumed
};

Bytes encode_message(std::string_view command, ByteView payload, const Magic& magic);

/// Decodes the frame at the start of `bytes`; trailing bytes are left
/// unconsumed. The payload length is checked against the 4 MiB limit before
/// the checksum is computed.
DecodedFrame decode_message(ByteView bytes, const Magic& magic);

/// Reads the payload length out of a complete header, validating magic and
/// the size limit. Used by stream readers to know how much to wait for.
std::uint32_t peek_payload_length(ByteView header, const Magic& magic);

// CompactSize

void append_varint(Bytes& out, std::uint64_t n);
Bytes encode_varint(std::uint64_t n);
std::size_t varint_size(std::uint64_t n);

/// Reader over a byte view with bounds-checked primitives.
class Reader {
public:
    explicit Reader(ByteView data) : data_(data) {}

    std::uint8_t u8();
    std::uint16_t u16_le();
    std::uint16_t u16_be();
    std::uint32_t u32_le();
    std::uint64_t u64_le();
    std::int32_t i32_le() { return static_cast<std::int32_t>(u32_le()); }
    std::int64_t i64_le() { return static_cast<std::int64_t>(u64_le()); }
    std::uint64_t varint();
    ByteView take(std::size_t n);

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }

private:
    ByteView data_;
    std::size_t pos_ = 0;
};

struct VarintDecode {
    std::uint64_t value = 0;
    std::size_t size = 0;
};
VarintDecode decode_varint(ByteView bytes);

// Payloads

struct NetAddress {
    std::uint64_t services = 0;
    Endpoint::IpBytes ip{};
    std::uint16_t port = 0;

    Endpoint endpoint() const { return Endpoint(ip, port); }
    bool operator==(const NetAddress&) const = default;
};

struct VersionPayload {
    std::int32_t protocol_version = kProtocolVersion;
    std::uint64_t services = 0;
    std::int64_t timestamp = 0;
    NetAddress receiver;
    NetAddress sender;
    std::uint64_t nonce = 0;
    std::string user_agent;
    std::int32_t start_height = 0;
    bool relay = false;

    bool has_negative_start_height() const { return start_height < 0; }
    bool operator==(const VersionPayload&) const = default;
};

struct AddrEntry {
    std::uint32_t last_seen = 0;
    std::uint64_t services = 0;
    Endpoint::IpBytes ip{};
    std::uint16_t port = 0;

    Endpoint endpoint() const { return Endpoint(ip, port); }
    static AddrEntry from_endpoint(const Endpoint& e, std::uint32_t last_seen, std::uint64_t services);
    bool operator==(const AddrEntry&) const = default;
};

Bytes encode_version(const VersionPayload& v);
/// A missing relay byte (pre-70001 peers) decodes as relay=true; bytes after
/// the relay flag are ignored.
VersionPayload decode_version(ByteView payload);

Bytes encode_addr(const std::vector<AddrEntry>& entries);
std::vector<AddrEntry> decode_addr(ByteView payload);

Bytes encode_ping(std::uint64_t nonce);
std::uint64_t decode_ping(ByteView payload);
Bytes encode_pong(std::uint64_t nonce);
std::uint64_t decode_pong(ByteView payload);

namespace command {
inline constexpr std::string_view version = "version";
inline constexpr std::string_view verack = "verack";
inline constexpr std::string_view getaddr = "getaddr";
inline constexpr std::string_view addr = "addr";
inline constexpr std::string_view ping = "ping";
inline constexpr std::string_view pong = "pong";
} // namespace command

} // namespace chainobs::wire
