#pragma once

#include "chainobs/bytes.hpp"
#include "chainobs/endpoint.hpp"

#include <memory>
#include <stdexcept>
#include <string>

namespace chainobs {

/// Milliseconds on a connection's own clock. Simulated connections run on
/// virtual time, socket connections on a steady clock.
using Millis = double;

enum class RecvStatus { data, timeout, closed };

struct RecvResult {
    RecvStatus status = RecvStatus::timeout;
    Bytes data;
};

class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A bidirectional byte stream to one peer.
class Connection {
public:
    virtual ~Connection() = default;

    /// Throws TransportError when the stream is closed.
    virtual void send(ByteView bytes) = 0;

    /// Waits at most `timeout` for bytes.
    virtual RecvResult receive(Millis timeout) = 0;

    virtual Millis now() const = 0;
};

struct ConnectResult {
    std::unique_ptr<Connection> connection; ///< null on failure
    std::string error;
    Millis connect_ms = 0;
};

/// Connector shared by crawler workers; implementations are thread-safe.
class Transport {
public:
    virtual ~Transport() = default;
    virtual ConnectResult connect(const Endpoint& endpoint, Millis timeout) = 0;
};

} // namespace chainobs
