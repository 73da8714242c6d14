#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <vector>

#include "cuasim/netsim.hpp"

// Socket transport: the wire format is one JSON object per line with exactly
// the envelope fields. The authority is the server; every CUAS and operator
// agent holds one TCP connection opened at scenario start and identified by
// a hello line. Wall clock throughout; outcomes must match the in-process
// transport, timings need not.

namespace cuasim::netsim {

domain::TimestampMs wall_now_ms();

/// Serves the clarification engine over TCP. Envelopes addressed to the
/// court are kept locally as the audit record.
class SocketServer {
public:
    SocketServer(std::shared_ptr<clarify::Engine> engine, int port);
    ~SocketServer();

    SocketServer(const SocketServer&) = delete;
    SocketServer& operator=(const SocketServer&) = delete;

    int port() const { return port_; }

    /// Serves until stop(); run it on a dedicated thread.
    void run();
    void stop();

    std::vector<std::pair<Envelope, domain::TimestampMs>> transcript() const;
    std::vector<Envelope> court_records() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

/// Drives one sans-io agent over a client connection with a local timer
/// queue. The agent's sends all go to the server.
class SocketClient {
public:
    SocketClient(Agent& agent, const std::string& host, int port, std::uint64_t msg_id_base);
    ~SocketClient();

    SocketClient(const SocketClient&) = delete;
    SocketClient& operator=(const SocketClient&) = delete;

    /// Runs the agent loop until stop(); run it on a dedicated thread.
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace cuasim::netsim
