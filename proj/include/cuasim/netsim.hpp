#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "cuasim/clarify.hpp"
#include "cuasim/envelope.hpp"
#include "cuasim/fsm.hpp"
#include "cuasim/registry.hpp"

// Transport and agents. Agents are sans-io state machines driven through a
// Context; the in-process bus runs them over a virtual clock as a
// deterministic discrete-event simulation, and the socket transport runs the
// same agents over TCP with the wall clock. Delivery is ordered and reliable;
// per-pair FIFO is guaranteed, cross-pair ordering is not.

namespace cuasim::netsim {

using domain::TimestampMs;

/// Deterministic RNG with a hand-rolled bounded sampler so transcripts do not
/// depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [lo, hi], inclusive.
    TimestampMs uniform(TimestampMs lo, TimestampMs hi);

private:
    std::mt19937_64 engine_;
};

/// Constant delay when lo == hi, otherwise uniform in [lo, hi].
struct LatencySpec {
    TimestampMs lo = 0;
    TimestampMs hi = 0;

    TimestampMs sample(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
};

struct DelayModel {
    LatencySpec default_edge{0, 0};
    std::map<std::pair<Role, Role>, LatencySpec> edge_overrides;
    /// Service time per inbound message at the authority; models the shared
    /// server the sessions contend for.
    TimestampMs authority_processing_ms = 0;
    LatencySpec operator_think{0, 0};
    /// Drop-injection hook. The protocol channel is reliable; this stays 0
    /// except for ad-hoc experiments.
    double drop_probability = 0.0;

    LatencySpec edge(Role sender, Role recipient) const;
};

struct TimerToken {
    std::string key;
    nlohmann::json data = nlohmann::json::object();
};

class Context {
public:
    virtual ~Context() = default;
    virtual TimestampMs now() const = 0;
    /// Stamps msg_id and sent_at, then hands the envelope to the transport.
    virtual void send(Envelope e) = 0;
    virtual void set_timer(TimestampMs delay_ms, TimerToken token) = 0;
};

class Agent {
public:
    virtual ~Agent() = default;
    virtual AgentId id() const = 0;
    virtual void on_start(Context&) {}
    virtual void on_message(const Envelope&, Context&) = 0;
    virtual void on_timer(const TimerToken&, Context&) {}
};

// ---------------------------------------------------------------------------
// Authority, operator, court and CUAS agents.

/// The authority serving loop: delegates to the clarification engine and
/// translates its timer requests into transport timers. Sessions never block
/// one another.
class AuthorityAgent final : public Agent {
public:
    explicit AuthorityAgent(std::shared_ptr<clarify::Engine> engine) : engine_(std::move(engine)) {}

    AgentId id() const override { return AgentId::authority(); }
    void on_message(const Envelope& e, Context& ctx) override;
    void on_timer(const TimerToken& token, Context& ctx) override;

    clarify::Engine& engine() { return *engine_; }

private:
    void emit(const clarify::DispatchResult& result, Context& ctx);
    std::shared_ptr<clarify::Engine> engine_;
};

/// Scripted operator behavior for one protocol request type.
struct OperatorScript {
    std::optional<clarify::OperatorResponse> response; // nullopt: stays silent
    TimestampMs think_ms = 0;
};

class OperatorAgent final : public Agent {
public:
    OperatorAgent(int index, std::map<std::string, OperatorScript> scripts)
        : index_(index), scripts_(std::move(scripts)) {}

    AgentId id() const override { return AgentId::oper(index_); }
    void on_message(const Envelope& e, Context& ctx) override;
    void on_timer(const TimerToken& token, Context& ctx) override;

    const std::vector<std::string>& orders_received() const { return orders_; }

private:
    int index_;
    std::map<std::string, OperatorScript> scripts_; // request msg_type -> behavior
    std::vector<std::string> orders_;
};

/// Write-only audit sink; never replies.
class CourtAgent final : public Agent {
public:
    AgentId id() const override { return AgentId::court(); }
    void on_message(const Envelope& e, Context&) override { records_.push_back(e); }

    const std::vector<Envelope>& records() const { return records_; }

private:
    std::vector<Envelope> records_;
};

/// What one tracked drone does in the scenario, materialized by the bench
/// module. The flags describe the drone's observable behavior; the registry
/// and fault contents decide which check fails.
struct DroneScript {
    domain::DroneId drone{"?"};
    enum class Rid { None, Authentic, Fake } rid = Rid::Authentic;
    bool restore_after_claim = false; // RID appears once the operator claims restoration
    domain::GeoPoint position;        // current position when detected
    bool returns_to_area = false;     // moves inside the area when claiming a return
    bool stops_when_claimed = false;  // RID ceases when the operator claims a stop
    int operator_index = 0;
    clarify::RiskContext risk;
    bool end_after_decision = true; // end the episode after the first decision
    int green_loops = 1;            // compliant check rounds before the mission ends
    std::string expected;           // "green" or "p<N>/CASE<k>", checked post-run
};

struct ClarificationRecord {
    std::string drone;
    int protocol = 0;
    std::string session_id;
    std::string case_label;
    domain::DecisionKind decision = domain::DecisionKind::RestorationConfirmed;
    TimestampMs detection_ts = 0;
    TimestampMs decided_ts = 0;

    TimestampMs delta_ms() const { return decided_ts - detection_ts; }
};

struct CuasConfig {
    domain::Zone zone{std::vector<domain::GeoPoint>{
        domain::GeoPoint(0, 0), domain::GeoPoint(0, 1), domain::GeoPoint(1, 1),
        domain::GeoPoint(1, 0)}};
    registry::AccessLevel access_level = registry::AccessLevel::Officials;
    TimestampMs rid_listen_ms = 500;     // window before concluding no RID
    TimestampMs recheck_period_ms = 1000;
    TimestampMs confirm_recheck_ms = 500;
    clarify::ConfirmationMode confirmation = clarify::ConfirmationMode::Explicit;
    std::string issuer_key_ref = "k1";
};

/// The CUAS: detects scripted drones, drives one post-detection machine per
/// drone, opens clarification sessions on orange states and records one
/// clarification sample per session.
class CuasAgent final : public Agent {
public:
    CuasAgent(int index, CuasConfig config, std::shared_ptr<registry::Registry> registry,
              std::vector<DroneScript> drones);

    AgentId id() const override { return AgentId::cuas(index_); }
    void on_start(Context& ctx) override;
    void on_message(const Envelope& e, Context& ctx) override;
    void on_timer(const TimerToken& token, Context& ctx) override;

    const std::vector<ClarificationRecord>& samples() const { return samples_; }
    bool all_episodes_done() const { return done_count_ == episodes_.size(); }
    std::size_t episode_count() const { return episodes_.size(); }

    /// Final FSM state name per drone, for conformance checks.
    std::map<std::string, std::string> final_states() const;
    /// drone -> (protocol, case) of the first decided session, or "green".
    std::map<std::string, std::string> outcomes() const;

    void set_done_callback(std::function<void()> cb) { on_all_done_ = std::move(cb); }

private:
    struct Episode {
        DroneScript script;
        fsm::Machine machine;
        TimestampMs detection_ts = 0;
        std::string active_session;    // correlation id of the open session
        int active_protocol = 0;
        bool awaiting_decision = false;
        int sessions_opened = 0;
        int loops_done = 0;
        bool rid_restored = false;     // claim honored, RID now on air
        bool mission_stopped = false;  // claim honored, RID ceased
        bool returned_to_area = false; // claim honored, position reads inside
        bool done = false;
        std::string first_outcome;     // "p<N>/CASE.." of the first decision
    };

    Episode& episode_for(const std::string& drone);
    void start_detection(Episode& ep, Context& ctx);
    void run_checks(Episode& ep, Context& ctx);
    void identity_checks(Episode& ep, Context& ctx);
    void auth_checks(Episode& ep, Context& ctx);
    void compliance_checks(Episode& ep, const registry::MissionAuthorization& auth, Context& ctx);
    void open_session(Episode& ep, int protocol, Context& ctx);
    void local_interdiction(Episode& ep, Context& ctx);
    void handle_decision(Episode& ep, const Envelope& e, Context& ctx);
    void handle_confirm_request(Episode& ep, const Envelope& e, Context& ctx);
    void resume_after_decision(Episode& ep, Context& ctx);
    void end_episode(Episode& ep, Context& ctx);
    void finish_interdiction(Episode& ep, Context& ctx, double timeout_s,
                             const std::string& session);
    domain::GeoPoint current_position(const Episode& ep) const;
    domain::Zone vicinity_zone(const Episode& ep) const;
    bool rid_on_air(const Episode& ep) const;
    domain::RemoteIdMessage make_rid(const Episode& ep, TimestampMs now) const;
    std::optional<registry::MissionAuthorization> relevant_authorization(Episode& ep,
                                                                         TimestampMs now);

    int index_;
    CuasConfig config_;
    std::shared_ptr<registry::Registry> registry_;
    std::map<std::string, Episode> episodes_;
    std::map<std::string, registry::MissionAuthorization> cached_auth_; // per drone
    std::vector<ClarificationRecord> samples_;
    std::size_t done_count_ = 0;
    int session_seq_ = 0;
    std::function<void()> on_all_done_;
};

// ---------------------------------------------------------------------------
// In-process transport: a deterministic discrete-event scheduler.

class InprocBus {
public:
    InprocBus(DelayModel delays, std::uint64_t seed);

    void add_agent(Agent& agent);

    /// Opens communication (agents must be registered before any send).
    /// Returns false if either side is unknown.
    bool channel_open(const AgentId& a, const AgentId& b) const;

    /// Runs until no events remain. Starts agents on the first call.
    void run();

    TimestampMs now() const { return now_; }

    /// Every delivered envelope with its delivery timestamp, in global
    /// delivery order.
    const std::vector<std::pair<Envelope, TimestampMs>>& transcript() const { return transcript_; }

private:
    class BusContext;
    friend class BusContext;

    struct Event {
        TimestampMs at = 0;
        std::uint64_t seq = 0;
        std::function<void()> fire;
    };
    struct EventOrder {
        bool operator()(const Event& a, const Event& b) const {
            return std::tie(a.at, a.seq) > std::tie(b.at, b.seq);
        }
    };

    void schedule(TimestampMs at, std::function<void()> fire);
    void deliver(const Envelope& e);
    void send_from(Agent& sender, Envelope e);

    DelayModel delays_;
    Rng rng_;
    TimestampMs now_ = 0;
    std::uint64_t seq_ = 0;
    std::uint64_t msg_ids_ = 0;
    bool started_ = false;
    std::map<std::string, Agent*> agents_;
    std::map<std::string, std::unique_ptr<Context>> contexts_;
    std::priority_queue<Event, std::vector<Event>, EventOrder> queue_;
    std::map<std::pair<std::string, std::string>, TimestampMs> pair_floor_;
    std::map<std::string, TimestampMs> server_free_;
    std::vector<std::pair<Envelope, TimestampMs>> transcript_;
};

/// Writes transcript lines (one JSON object per line, delivery order).
std::string transcript_to_jsonl(const std::vector<std::pair<Envelope, TimestampMs>>& transcript);

} // namespace cuasim::netsim
