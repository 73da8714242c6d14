#include "cuasim/socket_transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstring>
#include <map>
#include <mutex>
#include <queue>
#include <thread>

#include "cuasim/bench.hpp"

namespace cuasim::netsim {

using domain::TimestampMs;

TimestampMs wall_now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

namespace {

void write_all(int fd, const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
        if (n <= 0) {
            if (errno == EINTR) continue;
            return; // peer gone; the line is lost with the connection
        }
        off += static_cast<std::size_t>(n);
    }
}

int make_listener(int& port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("socket() failed");
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd);
        throw std::runtime_error("bind() failed");
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    port = ntohs(addr.sin_port);
    if (::listen(fd, 64) != 0) {
        ::close(fd);
        throw std::runtime_error("listen() failed");
    }
    return fd;
}

int connect_to(const std::string& host, int port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw std::runtime_error("bad host: " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd);
        throw std::runtime_error("connect() failed");
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return fd;
}

struct LineBuffer {
    std::string pending;

    // Appends raw bytes and returns any complete lines.
    std::vector<std::string> feed(const char* data, std::size_t n) {
        pending.append(data, n);
        std::vector<std::string> lines;
        std::size_t pos = 0;
        while (true) {
            const std::size_t nl = pending.find('\n', pos);
            if (nl == std::string::npos) break;
            lines.push_back(pending.substr(pos, nl - pos));
            pos = nl + 1;
        }
        pending.erase(0, pos);
        return lines;
    }
};

struct WakePipe {
    int fds[2] = {-1, -1};
    WakePipe() {
        if (::pipe(fds) != 0) throw std::runtime_error("pipe() failed");
        ::fcntl(fds[0], F_SETFL, O_NONBLOCK);
        ::fcntl(fds[1], F_SETFL, O_NONBLOCK);
    }
    ~WakePipe() {
        ::close(fds[0]);
        ::close(fds[1]);
    }
    void wake() const { (void)!::write(fds[1], "x", 1); }
    void drain() const {
        char buf[64];
        while (::read(fds[0], buf, sizeof buf) > 0) {}
    }
};

} // namespace

// ---------------------------------------------------------------------------
// Server.

struct SocketServer::Impl {
    std::shared_ptr<clarify::Engine> engine;
    int listen_fd = -1;
    WakePipe wake;
    std::atomic<bool> stopping{false};

    struct Connection {
        int fd = -1;
        LineBuffer buffer;
        std::string agent; // set by the hello line
    };
    std::vector<Connection> connections;
    std::map<std::string, int> fd_by_agent;

    struct PendingTimer {
        TimestampMs due;
        clarify::TimerRequest req;
        bool operator>(const PendingTimer& other) const { return due > other.due; }
    };
    std::priority_queue<PendingTimer, std::vector<PendingTimer>, std::greater<>> timers;

    std::uint64_t msg_ids = 1'000'000'000ull; // server-side id range

    mutable std::mutex record_mutex;
    std::vector<std::pair<Envelope, TimestampMs>> transcript;
    std::vector<Envelope> court;

    void record(const Envelope& e, TimestampMs at) {
        std::lock_guard lock(record_mutex);
        transcript.push_back({e, at});
    }

    void route(Envelope e, TimestampMs now) {
        e.msg_id = ++msg_ids;
        e.sent_at = now;
        record(e, now);
        if (e.recipient.role == Role::Court) {
            std::lock_guard lock(record_mutex);
            court.push_back(e);
            return;
        }
        auto it = fd_by_agent.find(e.recipient.to_string());
        if (it == fd_by_agent.end()) return; // recipient never connected
        write_all(it->second, e.to_json().dump() + "\n");
    }

    void absorb(const clarify::DispatchResult& result, TimestampMs now) {
        for (const auto& e : result.out) route(e, now);
        for (const auto& t : result.timers) timers.push({t.due_at, t});
    }

    void handle_line(Connection& conn, const std::string& line) {
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) return;
        if (j.contains("hello")) {
            conn.agent = j["hello"].get<std::string>();
            fd_by_agent[conn.agent] = conn.fd;
            return;
        }
        Envelope e = Envelope::from_json(j);
        const TimestampMs now = wall_now_ms();
        record(e, now);
        if (e.recipient.role == Role::Authority) {
            absorb(engine->dispatch(e, now), now);
        } else {
            // Hub routing for completeness; agents normally address only the
            // authority.
            route(e, now);
        }
    }

    void run() {
        while (!stopping.load()) {
            std::vector<pollfd> fds;
            fds.push_back({listen_fd, POLLIN, 0});
            fds.push_back({wake.fds[0], POLLIN, 0});
            for (const auto& c : connections) fds.push_back({c.fd, POLLIN, 0});

            int timeout = 200;
            const TimestampMs now = wall_now_ms();
            if (!timers.empty())
                timeout = static_cast<int>(std::clamp<TimestampMs>(timers.top().due - now, 0, 200));
            ::poll(fds.data(), fds.size(), timeout);

            const TimestampMs tick = wall_now_ms();
            while (!timers.empty() && timers.top().due <= tick) {
                clarify::TimerRequest req = timers.top().req;
                timers.pop();
                absorb(engine->on_timer(req, wall_now_ms()), wall_now_ms());
            }

            if (fds[0].revents & POLLIN) {
                const int client = ::accept(listen_fd, nullptr, nullptr);
                if (client >= 0) {
                    int one = 1;
                    ::setsockopt(client, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                    connections.push_back(Connection{client, {}, {}});
                }
            }
            if (fds[1].revents & POLLIN) wake.drain();

            for (std::size_t i = 0; i < connections.size();) {
                Connection& conn = connections[i];
                const pollfd& pfd = fds[2 + i];
                bool drop = false;
                if (pfd.revents & (POLLIN | POLLHUP | POLLERR)) {
                    char buf[16384];
                    const ssize_t n = ::recv(conn.fd, buf, sizeof buf, 0);
                    if (n > 0) {
                        for (const auto& line : conn.buffer.feed(buf, static_cast<std::size_t>(n)))
                            handle_line(conn, line);
                    } else if (n == 0 || (n < 0 && errno != EAGAIN && errno != EINTR)) {
                        drop = true;
                    }
                }
                if (drop) {
                    if (!conn.agent.empty()) {
                        // A vanished client cannot complete its exchanges.
                        try {
                            engine->cancel_sessions_from(AgentId::parse(conn.agent),
                                                         wall_now_ms());
                        } catch (const std::exception&) {
                            // unidentifiable hello name; nothing to cancel
                        }
                        fd_by_agent.erase(conn.agent);
                    }
                    ::close(conn.fd);
                    connections.erase(connections.begin() + static_cast<std::ptrdiff_t>(i));
                    // fds indexes are stale now; rebuild on the next loop.
                    break;
                }
                ++i;
            }
        }
        for (auto& c : connections) ::close(c.fd);
        connections.clear();
    }
};

SocketServer::SocketServer(std::shared_ptr<clarify::Engine> engine, int port)
    : impl_(std::make_unique<Impl>()) {
    impl_->engine = std::move(engine);
    port_ = port;
    impl_->listen_fd = make_listener(port_);
}

SocketServer::~SocketServer() {
    stop();
    if (impl_->listen_fd >= 0) ::close(impl_->listen_fd);
}

void SocketServer::run() { impl_->run(); }

void SocketServer::stop() {
    impl_->stopping.store(true);
    impl_->wake.wake();
}

std::vector<std::pair<Envelope, TimestampMs>> SocketServer::transcript() const {
    std::lock_guard lock(impl_->record_mutex);
    return impl_->transcript;
}

std::vector<Envelope> SocketServer::court_records() const {
    std::lock_guard lock(impl_->record_mutex);
    return impl_->court;
}

// ---------------------------------------------------------------------------
// Client.

struct SocketClient::Impl {
    Agent& agent;
    int fd = -1;
    std::uint64_t msg_ids;
    WakePipe wake;
    std::atomic<bool> stopping{false};
    LineBuffer buffer;

    struct PendingTimer {
        TimestampMs due;
        std::uint64_t seq;
        TimerToken token;
        bool operator>(const PendingTimer& other) const {
            return std::tie(due, seq) > std::tie(other.due, other.seq);
        }
    };
    std::priority_queue<PendingTimer, std::vector<PendingTimer>, std::greater<>> timers;
    std::uint64_t timer_seq = 0;

    class ClientContext final : public Context {
    public:
        explicit ClientContext(Impl& impl) : impl_(impl) {}
        TimestampMs now() const override { return wall_now_ms(); }
        void send(Envelope e) override {
            e.msg_id = ++impl_.msg_ids;
            e.sender = impl_.agent.id();
            e.sent_at = wall_now_ms();
            write_all(impl_.fd, e.to_json().dump() + "\n");
        }
        void set_timer(TimestampMs delay_ms, TimerToken token) override {
            impl_.timers.push({wall_now_ms() + std::max<TimestampMs>(0, delay_ms),
                               ++impl_.timer_seq, std::move(token)});
        }

    private:
        Impl& impl_;
    };

    Impl(Agent& a, std::uint64_t base) : agent(a), msg_ids(base) {}

    void run() {
        ClientContext ctx(*this);
        agent.on_start(ctx);
        while (!stopping.load()) {
            pollfd fds[2] = {{fd, POLLIN, 0}, {wake.fds[0], POLLIN, 0}};
            int timeout = 200;
            if (!timers.empty())
                timeout = static_cast<int>(
                    std::clamp<TimestampMs>(timers.top().due - wall_now_ms(), 0, 200));
            ::poll(fds, 2, timeout);

            while (!timers.empty() && timers.top().due <= wall_now_ms()) {
                TimerToken token = timers.top().token;
                timers.pop();
                agent.on_timer(token, ctx);
            }
            if (fds[1].revents & POLLIN) wake.drain();
            if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
                char buf[16384];
                const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
                if (n > 0) {
                    for (const auto& line : buffer.feed(buf, static_cast<std::size_t>(n))) {
                        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
                        if (j.is_discarded()) continue;
                        agent.on_message(Envelope::from_json(j), ctx);
                    }
                } else if (n == 0) {
                    break; // server closed
                }
            }
        }
    }
};

SocketClient::SocketClient(Agent& agent, const std::string& host, int port,
                           std::uint64_t msg_id_base)
    : impl_(std::make_unique<Impl>(agent, msg_id_base)) {
    impl_->fd = connect_to(host, port);
    write_all(impl_->fd, nlohmann::json{{"hello", agent.id().to_string()}}.dump() + "\n");
}

SocketClient::~SocketClient() {
    stop();
    if (impl_->fd >= 0) ::close(impl_->fd);
}

void SocketClient::run() { impl_->run(); }

void SocketClient::stop() {
    impl_->stopping.store(true);
    impl_->wake.wake();
}

} // namespace cuasim::netsim

// ---------------------------------------------------------------------------
// Socket-backed scenario run.

namespace cuasim::bench {

RunResult run_socket(const ScenarioConfig& s, int drone_count, int port) {
    using namespace std::chrono_literals;

    MaterializedRun m = materialize(s, drone_count, netsim::wall_now_ms());
    auto engine = std::make_shared<clarify::Engine>(m.registry, m.risk_policy, m.engine_config,
                                                    m.repair, m.directory);

    netsim::SocketServer server(engine, port);
    std::thread server_thread([&server] { server.run(); });

    netsim::CuasAgent cuas(0, m.cuas_config, m.registry, m.drones);
    std::mutex done_mutex;
    std::condition_variable done_cv;
    bool done = false;
    cuas.set_done_callback([&] {
        std::lock_guard lock(done_mutex);
        done = true;
        done_cv.notify_all();
    });

    std::vector<std::unique_ptr<netsim::OperatorAgent>> operator_agents;
    std::vector<std::unique_ptr<netsim::SocketClient>> clients;
    std::vector<std::thread> client_threads;

    const TimestampMs started_at = netsim::wall_now_ms();
    for (int i = 0; i < drone_count; ++i) {
        auto scripts_it = m.operator_scripts.find(i);
        operator_agents.push_back(std::make_unique<netsim::OperatorAgent>(
            i, scripts_it == m.operator_scripts.end()
                   ? std::map<std::string, netsim::OperatorScript>{}
                   : scripts_it->second));
        clients.push_back(std::make_unique<netsim::SocketClient>(
            *operator_agents.back(), "127.0.0.1", server.port(),
            2'000'000'000ull + 1'000'000ull * static_cast<std::uint64_t>(i)));
    }
    auto cuas_client = std::make_unique<netsim::SocketClient>(cuas, "127.0.0.1", server.port(),
                                                              1'500'000'000ull);

    for (auto& client : clients)
        client_threads.emplace_back([&client] { client->run(); });
    std::thread cuas_thread([&cuas_client] { cuas_client->run(); });

    {
        std::unique_lock lock(done_mutex);
        done_cv.wait_for(lock, 120s, [&] { return done; });
    }
    // Let the final reports drain through the hub before tearing down.
    std::this_thread::sleep_for(300ms);

    cuas_client->stop();
    cuas_thread.join();
    for (auto& client : clients) client->stop();
    for (auto& t : client_threads) t.join();
    server.stop();
    server_thread.join();

    RunResult result;
    result.samples = cuas.samples();
    result.outcomes = cuas.outcomes();
    result.expected = m.expected;
    result.duration_ms = netsim::wall_now_ms() - started_at;
    result.transcript_jsonl = netsim::transcript_to_jsonl(server.transcript());

    std::ostringstream sessions;
    for (const auto& [sid, session] : engine->sessions())
        sessions << session.summary_json().dump() << '\n';
    result.sessions_jsonl = sessions.str();

    std::ostringstream audit;
    for (const auto& record : server.court_records()) audit << record.to_json().dump() << '\n';
    result.audit_jsonl = audit.str();

    for (const auto& [drone, expected] : result.expected) {
        auto it = result.outcomes.find(drone);
        const std::string actual = it == result.outcomes.end() ? "missing" : it->second;
        if (actual != expected)
            result.mismatches.push_back(drone + ": expected " + expected + ", got " + actual);
    }
    if (!cuas.all_episodes_done())
        result.mismatches.push_back("not all drone episodes reached a terminal state");
    return result;
}

} // namespace cuasim::bench
