#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace chainobs {

inline constexpr std::uint16_t kDefaultPort = 8333;

enum class NetType { ipv4, ipv6, tor };

std::string_view to_string(NetType net);
std::optional<NetType> parse_net_type(std::string_view text);

/// A network endpoint in canonical 16-byte form. IPv4 addresses are stored
/// v4-mapped (::ffff:a.b.c.d); OnionCat addresses (fd87:d87e:eb43::/48) are
/// kept as-is.
class Endpoint {
public:
    using IpBytes = std::array<std::uint8_t, 16>;

    constexpr Endpoint() = default;
    constexpr Endpoint(const IpBytes& ip, std::uint16_t port) : ip_(ip), port_(port) {}

    static Endpoint from_ipv4(std::uint32_t host_order_ip, std::uint16_t port);

    /// Accepts "a.b.c.d", "a.b.c.d:port", "[v6]:port", "[v6]" and bare "v6".
    /// A missing port defaults to 8333.
    static std::optional<Endpoint> parse(std::string_view text);

    /// Parses an address without port ("a.b.c.d" or any IPv6 text form).
    static std::optional<IpBytes> parse_ip(std::string_view text);

    const IpBytes& ip() const { return ip_; }
    std::uint16_t port() const { return port_; }

    bool is_ipv4() const;
    bool is_onioncat() const;
    std::uint32_t ipv4() const; ///< host order; only meaningful when is_ipv4()

    /// IPv4 in dotted form, everything else in RFC 5952 text.
    std::string ip_string() const;

    /// "a.b.c.d:port" or "[v6]:port"; the snapshot key.
    std::string to_string() const;

    auto operator<=>(const Endpoint&) const = default;

private:
    IpBytes ip_{};
    std::uint16_t port_ = 0;
};

/// Base classification without exit-list knowledge.
NetType classify_address(const Endpoint::IpBytes& ip);

struct EndpointHash {
    std::size_t operator()(const Endpoint& e) const noexcept;
};

} // namespace chainobs
