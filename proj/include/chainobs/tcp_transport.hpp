#pragma once

#include "chainobs/transport.hpp"

namespace chainobs {

/// POSIX socket transport. OnionCat endpoints are refused since no proxy
/// support exists.
class TcpTransport : public Transport {
public:
    ConnectResult connect(const Endpoint& endpoint, Millis timeout) override;
};

} // namespace chainobs
