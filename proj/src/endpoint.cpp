#include "chainobs/endpoint.hpp"

#include <arpa/inet.h>

#include <charconv>
#include <cstring>

namespace chainobs {

namespace {

constexpr std::array<std::uint8_t, 12> kV4MappedPrefix{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff};
constexpr std::array<std::uint8_t, 6> kOnionCatPrefix{0xfd, 0x87, 0xd8, 0x7e, 0xeb, 0x43};

std::optional<std::uint16_t> parse_port(std::string_view text)
{
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty() || value > 65535) {
        return std::nullopt;
    }
    return static_cast<std::uint16_t>(value);
}

} // namespace

std::string_view to_string(NetType net)
{
    switch (net) {
    case NetType::ipv4: return "ipv4";
    case NetType::ipv6: return "ipv6";
    case NetType::tor: return "tor";
    }
    return "ipv6";
}

std::optional<NetType> parse_net_type(std::string_view text)
{
    if (text == "ipv4") return NetType::ipv4;
    if (text == "ipv6") return NetType::ipv6;
    if (text == "tor") return NetType::tor;
    return std::nullopt;
}

Endpoint Endpoint::from_ipv4(std::uint32_t host_order_ip, std::uint16_t port)
{
    IpBytes ip{};
    std::memcpy(ip.data(), kV4MappedPrefix.data(), kV4MappedPrefix.size());
    ip[12] = static_cast<std::uint8_t>(host_order_ip >> 24);
    ip[13] = static_cast<std::uint8_t>(host_order_ip >> 16);
    ip[14] = static_cast<std::uint8_t>(host_order_ip >> 8);
    ip[15] = static_cast<std::uint8_t>(host_order_ip);
    return Endpoint(ip, port);
}

std::optional<Endpoint::IpBytes> Endpoint::parse_ip(std::string_view text)
{
    if (text.empty() || text.size() >= INET6_ADDRSTRLEN) return std::nullopt;
    char buf[INET6_ADDRSTRLEN] = {};
    std::memcpy(buf, text.data(), text.size());

    in_addr v4{};
    if (inet_pton(AF_INET, buf, &v4) == 1) {
        return from_ipv4(ntohl(v4.s_addr), 0).ip();
    }
    IpBytes ip{};
    if (inet_pton(AF_INET6, buf, ip.data()) == 1) return ip;
    return std::nullopt;
}

std::optional<Endpoint> Endpoint::parse(std::string_view text)
{
    std::string_view host = text;
    std::uint16_t port = kDefaultPort;

    if (!text.empty() && text.front() == '[') {
        auto close = text.find(']');
        if (close == std::string_view::npos) return std::nullopt;
        host = text.substr(1, close - 1);
        auto rest = text.substr(close + 1);
        if (!rest.empty()) {
            if (rest.front() != ':') return std::nullopt;
            auto p = parse_port(rest.substr(1));
            if (!p) return std::nullopt;
            port = *p;
        }
    } else if (auto colon = text.find(':'); colon != std::string_view::npos &&
                                            text.find(':', colon + 1) == std::string_view::npos) {
        host = text.substr(0, colon);
        auto p = parse_port(text.substr(colon + 1));
        if (!p) return std::nullopt;
        port = *p;
    }

    auto ip = parse_ip(host);
    if (!ip) return std::nullopt;
    return Endpoint(*ip, port);
}

bool Endpoint::is_ipv4() const
{
    return std::memcmp(ip_.data(), kV4MappedPrefix.data(), kV4MappedPrefix.size()) == 0;
}

bool Endpoint::is_onioncat() const
{
    return std::memcmp(ip_.data(), kOnionCatPrefix.data(), kOnionCatPrefix.size()) == 0;
}

std::uint32_t Endpoint::ipv4() const
{
    return (std::uint32_t{ip_[12]} << 24) | (std::uint32_t{ip_[13]} << 16) |
           (std::uint32_t{ip_[14]} << 8) | std::uint32_t{ip_[15]};
}

std::string Endpoint::ip_string() const
{
    char buf[INET6_ADDRSTRLEN] = {};
    if (is_ipv4()) {
        in_addr v4{};
        v4.s_addr = htonl(ipv4());
        inet_ntop(AF_INET, &v4, buf, sizeof(buf));
    } else {
        inet_ntop(AF_INET6, ip_.data(), buf, sizeof(buf));
    }
    return buf;
}

std::string Endpoint::to_string() const
{
    if (is_ipv4()) return ip_string() + ":" + std::to_string(port_);
    return "[" + ip_string() + "]:" + std::to_string(port_);
}

NetType classify_address(const Endpoint::IpBytes& ip)
{
    Endpoint e(ip, 0);
    if (e.is_onioncat()) return NetType::tor;
    if (e.is_ipv4()) return NetType::ipv4;
    return NetType::ipv6;
}

std::size_t EndpointHash::operator()(const Endpoint& e) const noexcept
{
    // FNV-1a over ip and port
    std::uint64_t h = 1469598103934665603ull;
    for (std::uint8_t b : e.ip()) {
        h ^= b;
        h *= 1099511628211ull;
    }
    h ^= e.port();
    h *= 1099511628211ull;
    return static_cast<std::size_t>(h);
}

} // namespace chainobs
