#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cuasim/envelope.hpp"
#include "cuasim/fsm.hpp"
#include "cuasim/registry.hpp"

// The eight clarification protocols as correlated session state machines
// spanning CUAS, Authority and Operator. The Engine is the authority side:
// it consumes inbound envelopes, advances the matching session, runs risk
// assessment and database diagnosis, enforces the tolerance threshold, and
// emits the outbound messages of the protocol step. Sessions are isolated;
// a slow operator in one session never delays decisions in another.

namespace cuasim::clarify {

using domain::Decision;
using domain::DecisionKind;
using domain::DroneId;
using domain::RiskLevel;
using domain::TimestampMs;
using netsim::AgentId;
using netsim::Envelope;

// ---------------------------------------------------------------------------
// Wire labels. Protocol messages use the capitalized phrases of the message
// sequence charts so transcripts read like the charts.

namespace msg {
// CUAS -> Authority protocol openers, in protocol order.
inline constexpr const char* kOpenP1 = "NO ID BUT POTENTIAL OPERATOR";
inline constexpr const char* kOpenP2 = "UNKNOWN ID";
inline constexpr const char* kOpenP3 = "ID-DB MISS";
inline constexpr const char* kOpenP4 = "EXPIRED ID & UNAUTHORIZED MISSION";
inline constexpr const char* kOpenP5 = "EXPIRED ID BUT AUTHORIZED MISSION";
inline constexpr const char* kOpenP6 = "AUTH-DB MISS";
inline constexpr const char* kOpenP7 = "AREA VIOLATION";
inline constexpr const char* kOpenP8 = "TIME VIOLATION";

// Authority -> Operator.
inline constexpr const char* kCheckRestoreId = "CHECK/RESTORE ID TRANSMISSION";
inline constexpr const char* kReturnToArea = "RETURN TO AUTHORIZED AREA";
inline constexpr const char* kStopIfTimeExceeded = "STOP MISSION IF AUTHORIZED TIME IS EXCEEDED";
inline constexpr const char* kStopMission = "STOP MISSION";
inline constexpr const char* kCompleteMission = "COMPLETE MISSION";
inline constexpr const char* kVerificationInProgress = "VERIFICATION IN PROGRESS";

// Authority -> CUAS decisions and confirmation requests.
inline constexpr const char* kInterdictImmediately = "INTERDICT IMMEDIATELY";
inline constexpr const char* kImmediateInterdictionAuth = "IMMEDIATE INTERDICTION AUTHORIZATION";
inline constexpr const char* kInterdictAfterTimeout = "INTERDICT AFTER TIME-OUT";
inline constexpr const char* kTimedInterdictionAuth = "TIMED INTERDICTION AUTHORIZATION";
inline constexpr const char* kTolerateIdFailure = "TOLERATE ID FAILURE";
inline constexpr const char* kTolerateExpiredId = "TOLERATE EXPIRED ID";
inline constexpr const char* kTolerateAuthFailure = "TOLERATE AUTH FAILURE";
inline constexpr const char* kTolerateMission = "TOLERATE MISSION";
inline constexpr const char* kAuthDbMissResolved = "AUTH-DB MISS RESOLVED";
inline constexpr const char* kConfirmIdRestoration = "CONFIRM ID RESTORATION!";
inline constexpr const char* kConfirmDbRestoration = "CONFIRM DATABASE RESTORATION!";
inline constexpr const char* kConfirmValidIdEntry = "CONFIRM VALID ID ENTRY!";
inline constexpr const char* kVerifyReturnToArea = "VERIFY RETURN TO AUTHORIZED AREA";
inline constexpr const char* kVerifyMissionStop = "VERIFY MISSION STOP";
inline constexpr const char* kClarificationClosed = "CLARIFICATION CLOSED";

// CUAS -> Authority mid-session and reports.
inline constexpr const char* kConfirmedSuffix = " CONFIRMED";
inline constexpr const char* kNotConfirmedSuffix = " NOT CONFIRMED";
inline constexpr const char* kInterdictionReport = "INTERDICTION REPORT";

// Authority -> Court.
inline constexpr const char* kInterdictionAuthorized = "INTERDICTION AUTHORIZED";

inline constexpr const char* kError = "ERROR";
} // namespace msg

/// Opener label for protocol 1..8.
const char* opener_label(int protocol);
std::optional<int> protocol_for_opener(const std::string& msg_type);

enum class OperatorResponse {
    NoResponse,
    NotFlying,
    AlreadyTransmitting,
    CannotRestore,
    RestoredId,
    AlreadyInAuthorizedArea,
    CannotReturn,
    ReturnedToArea,
    NotExceedingTime,
    CannotStop,
    StoppedMission,
};

/// The phrase an operator sends on the wire for a response.
const char* response_label(OperatorResponse r);
std::optional<OperatorResponse> response_from_label(const std::string& msg_type);

/// Whether a response is legal for the given protocol (silence excluded;
/// silence is always "legal" by being a timeout).
bool response_legal(int protocol, OperatorResponse r);

enum class ConfirmationMode { Explicit, Implicit };

struct RiskContext {
    std::string mission_criticality = "normal";
    std::string zone_criticality = "normal";
    bool emergency = false;
};

/// Deterministic, total mapping from context to risk level; scripted by the
/// scenario, never learned.
using RiskPolicy = std::function<RiskLevel(const RiskContext&)>;

/// Which injected faults the authority actually fixes when a protocol asks it
/// to diagnose, and which it merely claims to have fixed (the reconfirmation
/// failure path).
struct RepairPolicy {
    std::set<std::string> repairs;         // drone ids whose faults get cleared
    std::set<std::string> phantom_repairs; // claimed fixed, fault left in place

    bool wants_repair(const std::string& drone) const {
        return repairs.count(drone) > 0 || phantom_repairs.count(drone) > 0;
    }
    bool is_phantom(const std::string& drone) const { return phantom_repairs.count(drone) > 0; }
};

enum class Phase { AwaitDiagnosis, AwaitOperator, AwaitConfirm, Closed };

struct ProtocolSession {
    std::string session_id;
    int protocol = 0;
    DroneId drone_id{"?"};
    AgentId cuas;
    std::optional<domain::OperatorId> operator_id;
    std::optional<AgentId> operator_agent;
    TimestampMs opened_at = 0;
    std::optional<TimestampMs> decided_at;
    std::optional<std::string> case_label;
    std::optional<Decision> outcome;
    bool cancelled = false;
    std::optional<TimestampMs> cancelled_at;
    std::vector<Envelope> transcript;

    // Engine-internal progress state.
    Phase phase = Phase::AwaitDiagnosis;
    std::uint64_t timer_epoch = 0;
    RiskContext risk_context;
    bool claim_pending = false; // an operator claim awaits CUAS verification

    bool closed() const { return phase == Phase::Closed; }
    nlohmann::ordered_json summary_json() const;
};

enum class TimerKind { DiagnosisDue, OperatorTimeout, ConfirmWindow };

struct TimerRequest {
    std::string session_id;
    TimerKind kind = TimerKind::DiagnosisDue;
    TimestampMs due_at = 0;
    std::uint64_t epoch = 0;
};

struct DispatchResult {
    std::vector<Envelope> out;
    std::vector<TimerRequest> timers;
};

struct EngineConfig {
    int tolerance_threshold = 2;
    TimestampMs operator_timeout_ms = 10'000;
    TimestampMs confirm_window_ms = 10'000;
    TimestampMs diagnosis_ms = 0;
    double timed_interdiction_timeout_s = 30.0;
    ConfirmationMode confirmation = ConfirmationMode::Explicit;
};

/// Resolves an operator identifier to the agent that can be messaged.
using OperatorDirectory = std::function<std::optional<AgentId>(const domain::OperatorId&)>;

class IllegalResponse : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Engine {
public:
    Engine(std::shared_ptr<registry::Registry> registry, RiskPolicy risk, EngineConfig config,
           RepairPolicy repair = {}, OperatorDirectory directory = {});

    /// Consumes one inbound envelope addressed to the authority and returns
    /// the authority's outbound messages plus any timers to arm. Unknown
    /// correlation ids, duplicate opens and illegal responses come back as
    /// ERROR envelopes rather than exceptions so a serving loop survives them.
    DispatchResult dispatch(const Envelope& in, TimestampMs now);

    /// Fires a previously requested timer. Stale timers (the session moved
    /// on) are ignored.
    DispatchResult on_timer(const TimerRequest& timer, TimestampMs now);

    /// Aborts an in-flight session without a decision (drone disappeared or
    /// transport failure). Recorded, no decision.
    void cancel_session(const std::string& session_id, TimestampMs now);

    /// Cancels every open session a disconnected agent had in flight.
    /// Returns how many sessions were cancelled.
    std::size_t cancel_sessions_from(const AgentId& agent, TimestampMs now);

    const std::map<std::string, ProtocolSession>& sessions() const { return sessions_; }
    const ProtocolSession* find_session(const std::string& session_id) const;

    void set_msg_id_source(std::function<std::uint64_t()> source) { next_id_ = std::move(source); }

    const EngineConfig& config() const { return config_; }
    registry::Registry& registry() { return *registry_; }

private:
    ProtocolSession& require_session(const std::string& id);
    Envelope make_envelope(const AgentId& to, const std::string& type, const std::string& correlation,
                           TimestampMs now, nlohmann::json payload);
    Envelope error_reply(const Envelope& in, const std::string& code, const std::string& detail,
                         TimestampMs now);
    TimerRequest arm(ProtocolSession& s, TimerKind kind, TimestampMs due);

    DispatchResult handle_open(const Envelope& in, int protocol, TimestampMs now);
    DispatchResult handle_operator_response(const Envelope& in, OperatorResponse r, TimestampMs now);
    DispatchResult handle_confirmation(const Envelope& in, bool confirmed, TimestampMs now);
    DispatchResult run_diagnosis(ProtocolSession& s, TimestampMs now);
    DispatchResult invalidated_claim(ProtocolSession& s, TimestampMs now);
    DispatchResult handle_confirmation_timeout_implicit(ProtocolSession& s, TimestampMs now);
    DispatchResult decide(ProtocolSession& s, const std::string& case_label, Decision decision,
                          bool order_stop, bool order_complete, TimestampMs now);
    RiskLevel assess_risk(const ProtocolSession& s) const;
    std::optional<AgentId> resolve_operator(const ProtocolSession& s) const;

    std::shared_ptr<registry::Registry> registry_;
    RiskPolicy risk_;
    EngineConfig config_;
    RepairPolicy repair_;
    OperatorDirectory directory_;
    fsm::ToleranceCounter tolerance_;
    std::map<std::string, ProtocolSession> sessions_;
    std::map<std::pair<std::string, int>, std::string> active_by_drone_;
    std::function<std::uint64_t()> next_id_;
    std::uint64_t id_counter_ = 0;
};

/// Wire label of a terminal decision for a given protocol. The charts use
/// slightly different phrases per protocol for the same verdict.
std::string decision_label(int protocol, const Decision& d);

// ---------------------------------------------------------------------------
// Synchronous protocol driver: runs one full protocol conversation against an
// Engine under a miniature virtual clock, with a scripted operator and a
// CUAS whose re-checks consult the registry. This is the unit under the
// case-conformance suite and the liveness soak.

struct ScriptedResponder {
    std::optional<OperatorResponse> response; // nullopt: stays silent past the timeout
    TimestampMs think_ms = 0;
    /// For claim responses on protocols 1/7/8: whether the claimed fix is
    /// observable by the CUAS (ID actually restored, drone actually back in
    /// the area, mission actually stopped).
    bool post_claim_ok = true;
};

struct ProtocolRun {
    std::string session_id;
    std::string case_label;
    Decision decision;
    bool stop_order_sent = false;
    bool complete_order_sent = false;
    bool interdiction_logged = false; // court record emitted
    TimestampMs opened_at = 0;
    TimestampMs decided_at = 0;
    std::vector<Envelope> outbound; // everything the authority emitted
};

class SyncRunner {
public:
    SyncRunner(std::shared_ptr<registry::Registry> registry, RiskPolicy risk, EngineConfig config,
               RepairPolicy repair = {}, OperatorDirectory directory = {});

    /// Runs protocol `n` for `drone` to completion. The opener payload is
    /// built the same way the CUAS agent builds it.
    ProtocolRun run(int protocol, const DroneId& drone, const ScriptedResponder& responder,
                    RiskContext risk_context = {});

    Engine& engine() { return engine_; }
    TimestampMs now() const { return now_; }

private:
    Engine engine_;
    TimestampMs now_ = 0;
    int seq_ = 0;
};

ProtocolRun run_protocol1(SyncRunner& r, const DroneId& d, const ScriptedResponder& s);
ProtocolRun run_protocol2(SyncRunner& r, const DroneId& d);
ProtocolRun run_protocol3(SyncRunner& r, const DroneId& d);
ProtocolRun run_protocol4(SyncRunner& r, const DroneId& d);
ProtocolRun run_protocol5(SyncRunner& r, const DroneId& d);
ProtocolRun run_protocol6(SyncRunner& r, const DroneId& d, RiskContext risk = {});
ProtocolRun run_protocol7(SyncRunner& r, const DroneId& d, const ScriptedResponder& s,
                          RiskContext risk = {});
ProtocolRun run_protocol8(SyncRunner& r, const DroneId& d, const ScriptedResponder& s,
                          RiskContext risk = {});

/// Builds the protocol-opening envelope exactly as the CUAS agent would.
Envelope build_opener(int protocol, const DroneId& drone, const AgentId& cuas,
                      const std::string& session_id, TimestampMs now, const RiskContext& risk,
                      const registry::Registry& registry, const domain::Zone* cuas_zone);

/// Reply label for a confirmation request ("CONFIRM ID RESTORATION!" ->
/// "ID RESTORATION CONFIRMED" / "... NOT CONFIRMED").
std::string confirm_reply_label(const std::string& request_type, bool confirmed);

} // namespace cuasim::clarify
