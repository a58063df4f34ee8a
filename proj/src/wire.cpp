#include "chainobs/wire.hpp"

#include <algorithm>
#include <cstring>

namespace chainobs::wire {

std::string_view to_string(Errc code)
{
    switch (code) {
    case Errc::CommandTooLong: return "CommandTooLong";
    case Errc::BadCommand: return "BadCommand";
    case Errc::BadMagic: return "BadMagic";
    case Errc::BadChecksum: return "BadChecksum";
    case Errc::Truncated: return "Truncated";
    case Errc::OversizedPayload: return "OversizedPayload";
    case Errc::NonCanonical: return "NonCanonical";
    case Errc::TooManyAddrEntries: return "TooManyAddrEntries";
    case Errc::UserAgentTooLong: return "UserAgentTooLong";
    }
    return "Unknown";
}

WireError::WireError(Errc code) : std::runtime_error(std::string(to_string(code))), code_(code) {}

namespace {

void append_u16_le(Bytes& out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void append_u16_be(Bytes& out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void append_u32_le(Bytes& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64_le(Bytes& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_net_address(Bytes& out, const NetAddress& a)
{
    append_u64_le(out, a.services);
    out.insert(out.end(), a.ip.begin(), a.ip.end());
    append_u16_be(out, a.port);
}

NetAddress read_net_address(Reader& r)
{
    NetAddress a;
    a.services = r.u64_le();
    auto ip = r.take(16);
    std::copy(ip.begin(), ip.end(), a.ip.begin());
    a.port = r.u16_be();
    return a;
}

bool is_printable(std::uint8_t c) { return c >= 0x20 && c <= 0x7e; }

std::string parse_command(ByteView field)
{
    std::size_t len = 0;
    while (len < field.size() && field[len] != 0) {
        if (!is_printable(field[len])) throw WireError(Errc::BadCommand);
        ++len;
    }
    for (std::size_t i = len; i < field.size(); ++i) {
        if (field[i] != 0) throw WireError(Errc::BadCommand);
    }
    if (len == 0) throw WireError(Errc::BadCommand);
    return std::string(reinterpret_cast<const char*>(field.data()), len);
}

std::array<std::uint8_t, 4> checksum(ByteView payload)
{
    auto h = double_sha256(payload);
    return {h[0], h[1], h[2], h[3]};
}

} // namespace

Bytes encode_message(std::string_view command, ByteView payload, const Magic& magic)
{
    if (command.size() > kCommandSize) throw WireError(Errc::CommandTooLong);
    if (command.empty()) throw WireError(Errc::BadCommand);
    for (char c : command) {
        if (!is_printable(static_cast<std::uint8_t>(c))) throw WireError(Errc::BadCommand);
    }
    if (payload.size() > kMaxPayloadSize) throw WireError(Errc::OversizedPayload);

    Bytes out;
    out.reserve(kHeaderSize + payload.size());
    out.insert(out.end(), magic.begin(), magic.end());
    out.insert(out.end(), command.begin(), command.end());
    out.resize(4 + kCommandSize, 0);
    append_u32_le(out, static_cast<std::uint32_t>(payload.size()));
    auto sum = checksum(payload);
    out.insert(out.end(), sum.begin(), sum.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::uint32_t peek_payload_length(ByteView header, const Magic& magic)
{
    if (header.size() < kHeaderSize) throw WireError(Errc::Truncated);
    if (!std::equal(magic.begin(), magic.end(), header.begin())) throw WireError(Errc::BadMagic);
    Reader r(header.subspan(4 + kCommandSize, 4));
    std::uint32_t length = r.u32_le();
    if (length > kMaxPayloadSize) throw WireError(Errc::OversizedPayload);
    return length;
}

DecodedFrame decode_message(ByteView bytes, const Magic& magic)
{
    std::uint32_t length = peek_payload_length(bytes, magic);
    std::string command = parse_command(bytes.subspan(4, kCommandSize));
    if (bytes.size() - kHeaderSize < length) throw WireError(Errc::Truncated);

    auto payload = bytes.subspan(kHeaderSize, length);
    auto expected = checksum(payload);
    if (!std::equal(expected.begin(), expected.end(), bytes.begin() + 20)) {
        throw WireError(Errc::BadChecksum);
    }
    return {Message{std::move(command), Bytes(payload.begin(), payload.end())}, kHeaderSize + length};
}

std::size_t varint_size(std::uint64_t n)
{
    if (n < 0xfd) return 1;
    if (n <= 0xffff) return 3;
    if (n <= 0xffffffff) return 5;
    return 9;
}

void append_varint(Bytes& out, std::uint64_t n)
{
    if (n < 0xfd) {
        out.push_back(static_cast<std::uint8_t>(n));
    } else if (n <= 0xffff) {
        out.push_back(0xfd);
        append_u16_le(out, static_cast<std::uint16_t>(n));
    } else if (n <= 0xffffffff) {
        out.push_back(0xfe);
        append_u32_le(out, static_cast<std::uint32_t>(n));
    } else {
        out.push_back(0xff);
        append_u64_le(out, n);
    }
}

Bytes encode_varint(std::uint64_t n)
{
    Bytes out;
    append_varint(out, n);
    return out;
}

VarintDecode decode_varint(ByteView bytes)
{
    Reader r(bytes);
    std::uint64_t value = r.varint();
    return {value, r.position()};
}

std::uint8_t Reader::u8()
{
    return take(1)[0];
}

std::uint16_t Reader::u16_le()
{
    auto b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint16_t Reader::u16_be()
{
    auto b = take(2);
    return static_cast<std::uint16_t>((b[0] << 8) | b[1]);
}

std::uint32_t Reader::u32_le()
{
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::uint64_t Reader::u64_le()
{
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::uint64_t Reader::varint()
{
    std::uint8_t tag = u8();
    std::uint64_t value = 0;
    std::uint64_t minimum = 0;
    switch (tag) {
    case 0xfd:
        value = u16_le();
        minimum = 0xfd;
        break;
    case 0xfe:
        value = u32_le();
        minimum = 0x10000;
        break;
    case 0xff:
        value = u64_le();
        minimum = 0x100000000ull;
        break;
    default:
        return tag;
    }
    if (value < minimum) throw WireError(Errc::NonCanonical);
    return value;
}

ByteView Reader::take(std::size_t n)
{
    if (remaining() < n) throw WireError(Errc::Truncated);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
}

AddrEntry AddrEntry::from_endpoint(const Endpoint& e, std::uint32_t last_seen, std::uint64_t services)
{
    return {last_seen, services, e.ip(), e.port()};
}

Bytes encode_version(const VersionPayload& v)
{
    if (v.user_agent.size() > kMaxUserAgentLength) throw WireError(Errc::UserAgentTooLong);
    Bytes out;
    out.reserve(86 + v.user_agent.size());
    append_u32_le(out, static_cast<std::uint32_t>(v.protocol_version));
    append_u64_le(out, v.services);
    append_u64_le(out, static_cast<std::uint64_t>(v.timestamp));
    append_net_address(out, v.receiver);
    append_net_address(out, v.sender);
    append_u64_le(out, v.nonce);
    append_varint(out, v.user_agent.size());
    out.insert(out.end(), v.user_agent.begin(), v.user_agent.end());
    append_u32_le(out, static_cast<std::uint32_t>(v.start_height));
    out.push_back(v.relay ? 1 : 0);
    return out;
}

VersionPayload decode_version(ByteView payload)
{
    Reader r(payload);
    VersionPayload v;
    v.protocol_version = r.i32_le();
    v.services = r.u64_le();
    v.timestamp = r.i64_le();
    v.receiver = read_net_address(r);
    v.sender = read_net_address(r);
    v.nonce = r.u64_le();
    std::uint64_t ua_len = r.varint();
    if (ua_len > kMaxUserAgentLength) throw WireError(Errc::UserAgentTooLong);
    auto ua = r.take(static_cast<std::size_t>(ua_len));
    v.user_agent.assign(reinterpret_cast<const char*>(ua.data()), ua.size());
    v.start_height = r.i32_le();
    v.relay = r.remaining() > 0 ? r.u8() != 0 : true;
    return v;
}

Bytes encode_addr(const std::vector<AddrEntry>& entries)
{
    if (entries.size() > kMaxAddrEntries) throw WireError(Errc::TooManyAddrEntries);
    Bytes out;
    out.reserve(3 + entries.size() * 30);
    append_varint(out, entries.size());
    for (const auto& e : entries) {
        append_u32_le(out, e.last_seen);
        append_u64_le(out, e.services);
        out.insert(out.end(), e.ip.begin(), e.ip.end());
        append_u16_be(out, e.port);
    }
    return out;
}

std::vector<AddrEntry> decode_addr(ByteView payload)
{
    Reader r(payload);
    std::uint64_t count = r.varint();
    if (count > kMaxAddrEntries) throw WireError(Errc::TooManyAddrEntries);
    std::vector<AddrEntry> entries;
    entries.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        AddrEntry e;
        e.last_seen = r.u32_le();
        e.services = r.u64_le();
        auto ip = r.take(16);
        std::copy(ip.begin(), ip.end(), e.ip.begin());
        e.port = r.u16_be();
        entries.push_back(e);
    }
    return entries;
}

Bytes encode_ping(std::uint64_t nonce)
{
    Bytes out;
    append_u64_le(out, nonce);
    return out;
}

std::uint64_t decode_ping(ByteView payload)
{
    Reader r(payload);
    return r.u64_le();
}

Bytes encode_pong(std::uint64_t nonce)
{
    return encode_ping(nonce);
}

std::uint64_t decode_pong(ByteView payload)
{
    return decode_ping(payload);
}

} // namespace chainobs::wire
