#include "cuasim/clarify.hpp"

#include <algorithm>

namespace cuasim::clarify {

using netsim::Role;
using nlohmann::json;

const char* opener_label(int protocol) {
    switch (protocol) {
    case 1: return msg::kOpenP1;
    case 2: return msg::kOpenP2;
    case 3: return msg::kOpenP3;
    case 4: return msg::kOpenP4;
    case 5: return msg::kOpenP5;
    case 6: return msg::kOpenP6;
    case 7: return msg::kOpenP7;
    case 8: return msg::kOpenP8;
    }
    throw std::logic_error("protocol out of range");
}

std::optional<int> protocol_for_opener(const std::string& msg_type) {
    for (int p = 1; p <= 8; ++p) {
        if (msg_type == opener_label(p)) return p;
    }
    return std::nullopt;
}

const char* response_label(OperatorResponse r) {
    switch (r) {
    case OperatorResponse::NoResponse: return "NO RESPONSE";
    case OperatorResponse::NotFlying: return "I AM NOT FLYING";
    case OperatorResponse::AlreadyTransmitting: return "I AM ALREADY TRANSMITTING MY ID";
    case OperatorResponse::CannotRestore: return "I AM NOT ABLE TO RESTORE ID";
    case OperatorResponse::RestoredId: return "I RESTORED ID TRANSMISSION";
    case OperatorResponse::AlreadyInAuthorizedArea: return "I AM ALREADY FLYING IN AUTHORIZED AREA";
    case OperatorResponse::CannotReturn: return "I CANNOT RETURN TO AUTHORIZED AREA";
    case OperatorResponse::ReturnedToArea: return "I RETURNED TO AUTHORIZED AREA";
    case OperatorResponse::NotExceedingTime: return "I AM NOT EXCEEDING AUTHORIZED FLIGHT TIME";
    case OperatorResponse::CannotStop: return "I CANNOT STOP MISSION";
    case OperatorResponse::StoppedMission: return "I STOPPED MISSION";
    }
    return "?";
}

std::optional<OperatorResponse> response_from_label(const std::string& msg_type) {
    for (OperatorResponse r :
         {OperatorResponse::NotFlying, OperatorResponse::AlreadyTransmitting,
          OperatorResponse::CannotRestore, OperatorResponse::RestoredId,
          OperatorResponse::AlreadyInAuthorizedArea, OperatorResponse::CannotReturn,
          OperatorResponse::ReturnedToArea, OperatorResponse::NotExceedingTime,
          OperatorResponse::CannotStop, OperatorResponse::StoppedMission}) {
        if (msg_type == response_label(r)) return r;
    }
    return std::nullopt;
}

bool response_legal(int protocol, OperatorResponse r) {
    switch (protocol) {
    case 1:
        return r == OperatorResponse::NoResponse || r == OperatorResponse::NotFlying ||
               r == OperatorResponse::AlreadyTransmitting || r == OperatorResponse::CannotRestore ||
               r == OperatorResponse::RestoredId;
    case 7:
        return r == OperatorResponse::NoResponse || r == OperatorResponse::AlreadyInAuthorizedArea ||
               r == OperatorResponse::CannotReturn || r == OperatorResponse::ReturnedToArea;
    case 8:
        return r == OperatorResponse::NoResponse || r == OperatorResponse::NotExceedingTime ||
               r == OperatorResponse::CannotStop || r == OperatorResponse::StoppedMission;
    default:
        return false; // protocols 2..6 involve no operator reply
    }
}

std::string decision_label(int protocol, const Decision& d) {
    switch (d.kind) {
    case DecisionKind::ImmediateInterdiction:
        return protocol == 2 ? msg::kImmediateInterdictionAuth : msg::kInterdictImmediately;
    case DecisionKind::TimedInterdiction:
        return protocol == 4 ? msg::kTimedInterdictionAuth : msg::kInterdictAfterTimeout;
    case DecisionKind::TolerateIdFailure:
        return protocol == 5 ? msg::kTolerateExpiredId : msg::kTolerateIdFailure;
    case DecisionKind::TolerateAuthFailure: return msg::kTolerateAuthFailure;
    case DecisionKind::TolerateMission: return msg::kTolerateMission;
    case DecisionKind::IssueResolved: return msg::kAuthDbMissResolved;
    case DecisionKind::RestorationConfirmed: return msg::kClarificationClosed;
    }
    return "?";
}

namespace {

// Confirmation requests and the base phrase of the matching CUAS reply.
struct ConfirmPair {
    const char* request;
    const char* reply_base;
};

constexpr ConfirmPair kConfirmPairs[] = {
    {msg::kConfirmIdRestoration, "ID RESTORATION"},
    {msg::kConfirmDbRestoration, "DATABASE RESTORATION"},
    {msg::kConfirmValidIdEntry, "VALID ID ENTRY"},
    {msg::kVerifyReturnToArea, "RETURN TO AUTHORIZED AREA"},
    {msg::kVerifyMissionStop, "MISSION STOP"},
};

std::optional<bool> parse_confirmation(const std::string& msg_type) {
    for (const auto& pair : kConfirmPairs) {
        if (msg_type == std::string(pair.reply_base) + msg::kConfirmedSuffix) return true;
        if (msg_type == std::string(pair.reply_base) + msg::kNotConfirmedSuffix) return false;
    }
    return std::nullopt;
}

json risk_to_json(const RiskContext& r) {
    return {{"mission_criticality", r.mission_criticality},
            {"zone_criticality", r.zone_criticality},
            {"emergency", r.emergency}};
}

RiskContext risk_from_json(const json& payload) {
    RiskContext r;
    if (payload.contains("risk")) {
        const json& j = payload["risk"];
        r.mission_criticality = j.value("mission_criticality", "normal");
        r.zone_criticality = j.value("zone_criticality", "normal");
        r.emergency = j.value("emergency", false);
    }
    return r;
}

} // namespace

std::string confirm_reply_label(const std::string& request_type, bool confirmed) {
    for (const auto& pair : kConfirmPairs) {
        if (request_type == pair.request)
            return std::string(pair.reply_base) +
                   (confirmed ? msg::kConfirmedSuffix : msg::kNotConfirmedSuffix);
    }
    throw std::logic_error("not a confirmation request: " + request_type);
}

nlohmann::ordered_json ProtocolSession::summary_json() const {
    nlohmann::ordered_json j;
    j["session_id"] = session_id;
    j["protocol"] = protocol;
    j["drone_id"] = drone_id.value();
    j["cuas"] = cuas.to_string();
    if (operator_id) j["operator_id"] = operator_id->to_hex();
    j["opened_at"] = opened_at;
    if (decided_at) j["decided_at"] = *decided_at;
    if (case_label) j["case"] = *case_label;
    if (outcome) {
        j["decision"] = domain::to_string(outcome->kind);
        if (outcome->kind == DecisionKind::TimedInterdiction) j["timeout_s"] = outcome->timeout_s;
        if (outcome->nondestructive) j["nondestructive"] = true;
    }
    j["cancelled"] = cancelled;
    j["messages"] = transcript.size();
    return j;
}

Engine::Engine(std::shared_ptr<registry::Registry> registry, RiskPolicy risk, EngineConfig config,
               RepairPolicy repair, OperatorDirectory directory)
    : registry_(std::move(registry)), risk_(std::move(risk)), config_(config),
      repair_(std::move(repair)), directory_(std::move(directory)) {
    if (!registry_) throw std::invalid_argument("Engine: registry required");
    if (!risk_) risk_ = [](const RiskContext&) { return RiskLevel::Low; };
    if (!directory_) directory_ = [](const domain::OperatorId&) { return AgentId::oper(0); };
}

const ProtocolSession* Engine::find_session(const std::string& session_id) const {
    auto it = sessions_.find(session_id);
    return it == sessions_.end() ? nullptr : &it->second;
}

ProtocolSession& Engine::require_session(const std::string& id) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw std::out_of_range("unknown session: " + id);
    return it->second;
}

Envelope Engine::make_envelope(const AgentId& to, const std::string& type,
                               const std::string& correlation, TimestampMs now, json payload) {
    Envelope e;
    e.msg_id = next_id_ ? next_id_() : ++id_counter_;
    e.correlation_id = correlation;
    e.sender = AgentId::authority();
    e.recipient = to;
    e.msg_type = type;
    e.sent_at = now;
    e.payload = std::move(payload);
    return e;
}

Envelope Engine::error_reply(const Envelope& in, const std::string& code, const std::string& detail,
                             TimestampMs now) {
    return make_envelope(in.sender, msg::kError, in.correlation_id, now,
                         json{{"error", code}, {"detail", detail}, {"offending_type", in.msg_type}});
}

TimerRequest Engine::arm(ProtocolSession& s, TimerKind kind, TimestampMs due) {
    ++s.timer_epoch;
    return TimerRequest{s.session_id, kind, due, s.timer_epoch};
}

RiskLevel Engine::assess_risk(const ProtocolSession& s) const { return risk_(s.risk_context); }

std::optional<AgentId> Engine::resolve_operator(const ProtocolSession& s) const {
    if (!s.operator_id) return std::nullopt;
    return directory_(*s.operator_id);
}

DispatchResult Engine::dispatch(const Envelope& in, TimestampMs now) {
    if (auto protocol = protocol_for_opener(in.msg_type)) return handle_open(in, *protocol, now);
    if (auto response = response_from_label(in.msg_type))
        return handle_operator_response(in, *response, now);
    if (auto confirmed = parse_confirmation(in.msg_type))
        return handle_confirmation(in, *confirmed, now);

    if (in.msg_type == msg::kInterdictionReport) {
        // Sessionless reports cover the direct red paths (fake ID, no ID and
        // no potential operator) where the CUAS decides locally.
        if (in.correlation_id.empty()) {
            Envelope court = make_envelope(AgentId::court(), msg::kInterdictionReport, "", now,
                                           in.payload);
            return {{court}, {}};
        }
        auto it = sessions_.find(in.correlation_id);
        if (it == sessions_.end())
            return {{error_reply(in, "UnknownCorrelation", "no such session", now)}, {}};
        it->second.transcript.push_back(in);
        // The court keeps the record for potential legal follow-up.
        Envelope court = make_envelope(AgentId::court(), msg::kInterdictionReport, in.correlation_id,
                                       now, in.payload);
        it->second.transcript.push_back(court);
        return {{court}, {}};
    }

    return {{error_reply(in, "Malformed", "unrecognized message type", now)}, {}};
}

DispatchResult Engine::handle_open(const Envelope& in, int protocol, TimestampMs now) {
    if (in.correlation_id.empty())
        return {{error_reply(in, "Malformed", "opener without correlation id", now)}, {}};
    if (!in.payload.is_object() || !in.payload.contains("drone_id"))
        return {{error_reply(in, "Malformed", "opener without drone_id", now)}, {}};

    const std::string drone = in.payload["drone_id"].get<std::string>();

    // A re-sent opener for a session awaiting confirmation is the implicit
    // invalidation of the pending claim (protocols 1/7/8). Any other second
    // open for the same drone and protocol is rejected.
    auto active = active_by_drone_.find({drone, protocol});
    if (active != active_by_drone_.end()) {
        ProtocolSession& s = sessions_.at(active->second);
        if (!s.closed()) {
            if (s.phase == Phase::AwaitConfirm && (protocol == 1 || protocol == 7 || protocol == 8) &&
                in.correlation_id == s.session_id) {
                s.transcript.push_back(in);
                return invalidated_claim(s, now);
            }
            return {{error_reply(in, "DuplicateOpen", "protocol already active for drone", now)}, {}};
        }
    }
    if (sessions_.count(in.correlation_id))
        return {{error_reply(in, "DuplicateOpen", "correlation id already used", now)}, {}};

    ProtocolSession s;
    s.session_id = in.correlation_id;
    s.protocol = protocol;
    s.drone_id = DroneId(drone);
    s.cuas = in.sender;
    s.opened_at = now;
    s.risk_context = risk_from_json(in.payload);
    for (const char* key : {"potential_operator", "operator"}) {
        if (in.payload.contains(key))
            s.operator_id = domain::OperatorId::from_hex(in.payload[key].get<std::string>());
    }
    if (!s.operator_id) {
        if (auto rec = registry_->raw_id_record(s.drone_id)) s.operator_id = rec->operator_id;
    }
    s.transcript.push_back(in);

    auto [it, inserted] = sessions_.emplace(s.session_id, std::move(s));
    active_by_drone_[{drone, protocol}] = it->first;
    ProtocolSession& session = it->second;

    DispatchResult result;
    if (protocol == 1 || protocol == 7 || protocol == 8) {
        session.phase = Phase::AwaitOperator;
        const char* request = protocol == 1   ? msg::kCheckRestoreId
                              : protocol == 7 ? msg::kReturnToArea
                                              : msg::kStopIfTimeExceeded;
        if (auto op = resolve_operator(session)) {
            Envelope ask =
                make_envelope(*op, request, session.session_id, now, json{{"drone_id", drone}});
            session.transcript.push_back(ask);
            result.out.push_back(ask);
        }
        result.timers.push_back(
            arm(session, TimerKind::OperatorTimeout, now + config_.operator_timeout_ms));
    } else {
        session.phase = Phase::AwaitDiagnosis;
        result.timers.push_back(arm(session, TimerKind::DiagnosisDue, now + config_.diagnosis_ms));
    }
    return result;
}

DispatchResult Engine::handle_operator_response(const Envelope& in, OperatorResponse response,
                                                TimestampMs now) {
    auto it = sessions_.find(in.correlation_id);
    if (it == sessions_.end())
        return {{error_reply(in, "UnknownCorrelation", "no such session", now)}, {}};
    ProtocolSession& s = it->second;
    if (s.closed()) return {}; // late reply after the timeout already decided

    if (!response_legal(s.protocol, response))
        return {{error_reply(in, "IllegalResponse",
                             std::string(response_label(response)) + " not legal in protocol " +
                                 std::to_string(s.protocol),
                             now)},
                {}};
    if (s.phase != Phase::AwaitOperator)
        return {{error_reply(in, "IllegalResponse", "response outside the response phase", now)}, {}};

    s.transcript.push_back(in);
    if (in.sender.role == Role::Operator) s.operator_agent = in.sender;
    ++s.timer_epoch; // retire the operator timeout

    auto risk_branch = [&](const char* case_label, DecisionKind tolerate_kind) {
        if (assess_risk(s) == RiskLevel::Low)
            return decide(s, case_label, Decision::of(tolerate_kind), false, true, now);
        return decide(s, case_label, Decision::timed(config_.timed_interdiction_timeout_s), true,
                      false, now);
    };

    auto claim = [&](const char* request_to_cuas) {
        DispatchResult result;
        s.phase = Phase::AwaitConfirm;
        s.claim_pending = true;
        if (auto op = resolve_operator(s)) {
            Envelope note = make_envelope(*op, msg::kVerificationInProgress, s.session_id, now,
                                          json{{"drone_id", s.drone_id.value()}});
            s.transcript.push_back(note);
            result.out.push_back(note);
        }
        Envelope ask =
            make_envelope(s.cuas, request_to_cuas, s.session_id, now,
                          json{{"drone_id", s.drone_id.value()},
                               {"mode", config_.confirmation == ConfirmationMode::Explicit
                                            ? "explicit"
                                            : "implicit"}});
        s.transcript.push_back(ask);
        result.out.push_back(ask);
        result.timers.push_back(arm(s, TimerKind::ConfirmWindow, now + config_.confirm_window_ms));
        return result;
    };

    switch (s.protocol) {
    case 1:
        switch (response) {
        case OperatorResponse::NotFlying:
            return decide(s, "CASE2", Decision::immediate(), false, false, now);
        case OperatorResponse::AlreadyTransmitting:
            return risk_branch("CASE3", DecisionKind::TolerateIdFailure);
        case OperatorResponse::CannotRestore:
            return risk_branch("CASE4", DecisionKind::TolerateIdFailure);
        case OperatorResponse::RestoredId: return claim(msg::kConfirmIdRestoration);
        default: break;
        }
        break;
    case 7:
        switch (response) {
        case OperatorResponse::AlreadyInAuthorizedArea:
            return risk_branch("CASE2", DecisionKind::TolerateMission);
        case OperatorResponse::CannotReturn:
            return risk_branch("CASE3", DecisionKind::TolerateMission);
        case OperatorResponse::ReturnedToArea: return claim(msg::kVerifyReturnToArea);
        default: break;
        }
        break;
    case 8:
        switch (response) {
        case OperatorResponse::NotExceedingTime:
            return risk_branch("CASE2", DecisionKind::TolerateMission);
        case OperatorResponse::CannotStop:
            return risk_branch("CASE3", DecisionKind::TolerateMission);
        case OperatorResponse::StoppedMission: return claim(msg::kVerifyMissionStop);
        default: break;
        }
        break;
    default: break;
    }
    return {{error_reply(in, "IllegalResponse", "unhandled response", now)}, {}};
}

DispatchResult Engine::handle_confirmation(const Envelope& in, bool confirmed, TimestampMs now) {
    auto it = sessions_.find(in.correlation_id);
    if (it == sessions_.end())
        return {{error_reply(in, "UnknownCorrelation", "no such session", now)}, {}};
    ProtocolSession& s = it->second;
    if (s.closed()) return {};
    if (s.phase != Phase::AwaitConfirm)
        return {{error_reply(in, "Malformed", "no confirmation pending", now)}, {}};

    s.transcript.push_back(in);
    ++s.timer_epoch; // retire the confirmation window

    if (!confirmed) return invalidated_claim(s, now);

    const char* case_label = nullptr;
    switch (s.protocol) {
    case 1: case_label = "CASE5"; break;
    case 3: case_label = "CASE2"; break;
    case 4: case_label = "CASE3"; break;
    case 5: case_label = "CASE2"; break;
    case 7: case_label = "CASE4"; break;
    case 8: case_label = "CASE4"; break;
    default:
        return {{error_reply(in, "Malformed", "confirmation for a protocol without one", now)}, {}};
    }
    return decide(s, case_label, Decision::of(DecisionKind::RestorationConfirmed), false, false, now);
}

DispatchResult Engine::invalidated_claim(ProtocolSession& s, TimestampMs now) {
    ++s.timer_epoch;
    switch (s.protocol) {
    case 1: {
        // Invalidated ID restoration: fast risk assessment, then tolerate or
        // interdict after a timeout.
        if (assess_risk(s) == RiskLevel::Low)
            return decide(s, "CASE6", Decision::of(DecisionKind::TolerateIdFailure), false, true,
                          now);
        return decide(s, "CASE6", Decision::timed(config_.timed_interdiction_timeout_s), true, false,
                      now);
    }
    case 7:
    case 8:
        return decide(s, "CASE5", Decision::timed(config_.timed_interdiction_timeout_s), true, false,
                      now);
    case 3: {
        // Claimed restoration did not hold up; fall back to the unknown-ID
        // diagnosis over the current database state.
        const auto faults = registry_->faults();
        const bool id_fault = faults.id_db_miss.count(s.drone_id.value()) > 0;
        const bool auth_fault = faults.auth_db_miss.count(s.drone_id.value()) > 0;
        if (id_fault && auth_fault)
            return decide(s, "CASE2-ESCALATED", Decision::of(DecisionKind::TolerateAuthFailure),
                          false, false, now);
        if (!registry_->id_row_exists(s.drone_id))
            return decide(s, "CASE2-ESCALATED", Decision::immediate(true), false, false, now);
        return decide(s, "CASE2-ESCALATED", Decision::timed(config_.timed_interdiction_timeout_s),
                      true, false, now);
    }
    case 5: {
        // Claimed ID-DB update did not hold up; fall back to the
        // expired-and-unauthorized diagnosis.
        const auto faults = registry_->faults();
        const bool fault = faults.stale_expiry.count(s.drone_id.value()) > 0 ||
                           faults.auth_db_miss.count(s.drone_id.value()) > 0;
        if (fault)
            return decide(s, "CASE2-ESCALATED", Decision::of(DecisionKind::TolerateAuthFailure),
                          false, false, now);
        return decide(s, "CASE2-ESCALATED", Decision::timed(config_.timed_interdiction_timeout_s),
                      true, false, now);
    }
    case 4: {
        const auto faults = registry_->faults();
        const bool fault = faults.stale_expiry.count(s.drone_id.value()) > 0 ||
                           faults.auth_db_miss.count(s.drone_id.value()) > 0;
        if (fault)
            return decide(s, "CASE3-ESCALATED", Decision::of(DecisionKind::TolerateAuthFailure),
                          false, false, now);
        return decide(s, "CASE3-ESCALATED", Decision::timed(config_.timed_interdiction_timeout_s),
                      true, false, now);
    }
    default:
        return decide(s, "CASE-INVALID", Decision::timed(config_.timed_interdiction_timeout_s), true,
                      false, now);
    }
}

DispatchResult Engine::run_diagnosis(ProtocolSession& s, TimestampMs now) {
    const std::string drone = s.drone_id.value();
    const auto faults = registry_->faults();
    const bool id_fault = faults.id_db_miss.count(drone) > 0;
    const bool auth_fault = faults.auth_db_miss.count(drone) > 0;
    const bool stale_fault = faults.stale_expiry.count(drone) > 0;

    auto request_confirmation = [&](const char* request) {
        DispatchResult result;
        s.phase = Phase::AwaitConfirm;
        Envelope ask = make_envelope(s.cuas, request, s.session_id, now,
                                     json{{"drone_id", drone},
                                          {"mode", config_.confirmation == ConfirmationMode::Explicit
                                                       ? "explicit"
                                                       : "implicit"}});
        s.transcript.push_back(ask);
        result.out.push_back(ask);
        result.timers.push_back(arm(s, TimerKind::ConfirmWindow, now + config_.confirm_window_ms));
        return result;
    };

    switch (s.protocol) {
    case 2: {
        if (!registry_->id_row_exists(s.drone_id)) {
            // Authentic token, no registration anywhere, databases healthy:
            // assume a security break and keep the drone recoverable.
            return decide(s, "CASE1", Decision::immediate(/*nondestructive=*/true), false, false,
                          now);
        }
        // Issues with both databases only when an authorization actually
        // exists behind the failing retrieval.
        if (id_fault && auth_fault && registry_->auth_row_exists(s.drone_id, s.opened_at))
            return decide(s, "CASE3", Decision::of(DecisionKind::TolerateAuthFailure), false, false,
                          now);
        if (id_fault)
            return decide(s, "CASE2", Decision::timed(config_.timed_interdiction_timeout_s), true,
                          false, now);
        return decide(s, "CASE1", Decision::immediate(/*nondestructive=*/true), false, false, now);
    }
    case 3: {
        if (id_fault && repair_.wants_repair(drone)) {
            if (!repair_.is_phantom(drone)) registry_->clear_fault("id_db_miss", s.drone_id);
            return request_confirmation(msg::kConfirmIdRestoration);
        }
        return decide(s, "CASE1", Decision::of(DecisionKind::TolerateIdFailure), false, false, now);
    }
    case 4: {
        const bool fault = stale_fault || auth_fault;
        if (fault && repair_.wants_repair(drone)) {
            if (!repair_.is_phantom(drone)) {
                if (stale_fault) registry_->clear_fault("stale_expiry", s.drone_id);
                if (auth_fault) registry_->clear_fault("auth_db_miss", s.drone_id);
            }
            return request_confirmation(msg::kConfirmDbRestoration);
        }
        if (fault)
            return decide(s, "CASE2", Decision::of(DecisionKind::TolerateAuthFailure), false, false,
                          now);
        return decide(s, "CASE1", Decision::timed(config_.timed_interdiction_timeout_s), true, false,
                      now);
    }
    case 5: {
        if (stale_fault && repair_.wants_repair(drone)) {
            if (!repair_.is_phantom(drone)) registry_->clear_fault("stale_expiry", s.drone_id);
            return request_confirmation(msg::kConfirmValidIdEntry);
        }
        return decide(s, "CASE1", Decision::of(DecisionKind::TolerateIdFailure), false, false, now);
    }
    case 6: {
        if (auth_fault && registry_->auth_row_exists(s.drone_id, s.opened_at)) {
            registry_->clear_fault("auth_db_miss", s.drone_id);
            return decide(s, "CASE1", Decision::of(DecisionKind::IssueResolved), false, false, now);
        }
        if (assess_risk(s) == RiskLevel::High)
            return decide(s, "CASE2", Decision::timed(config_.timed_interdiction_timeout_s), true,
                          false, now);
        return decide(s, "CASE3", Decision::of(DecisionKind::TolerateMission), false, true, now);
    }
    default:
        throw std::logic_error("diagnosis for a protocol without one");
    }
}

DispatchResult Engine::decide(ProtocolSession& s, const std::string& case_label, Decision decision,
                              bool order_stop, bool order_complete, TimestampMs now) {
    decision = fsm::apply_tolerance(tolerance_, s.drone_id, s.protocol, config_.tolerance_threshold,
                                    decision, config_.timed_interdiction_timeout_s);
    if (decision.kind == DecisionKind::TimedInterdiction) {
        // An interdiction after timeout is always paired with a mission-stop
        // order, including when the tolerance threshold overrode a tolerance.
        order_stop = true;
        order_complete = false;
    }

    DispatchResult result;
    if ((order_stop || order_complete) && s.operator_id) {
        if (auto op = resolve_operator(s)) {
            Envelope order =
                make_envelope(*op, order_stop ? msg::kStopMission : msg::kCompleteMission,
                              s.session_id, now, json{{"drone_id", s.drone_id.value()}});
            s.transcript.push_back(order);
            result.out.push_back(order);
        }
    }

    json payload{{"drone_id", s.drone_id.value()},
                 {"case", case_label},
                 {"decision", domain::to_string(decision.kind)}};
    if (decision.kind == DecisionKind::TimedInterdiction) payload["timeout_s"] = decision.timeout_s;
    if (decision.nondestructive) payload["nondestructive"] = true;
    Envelope verdict =
        make_envelope(s.cuas, decision_label(s.protocol, decision), s.session_id, now, payload);
    s.transcript.push_back(verdict);
    result.out.push_back(verdict);

    if (decision.is_interdiction()) {
        json record{{"drone_id", s.drone_id.value()},
                    {"protocol", s.protocol},
                    {"case", case_label},
                    {"decision", domain::to_string(decision.kind)}};
        if (decision.kind == DecisionKind::TimedInterdiction) record["timeout_s"] = decision.timeout_s;
        Envelope court = make_envelope(AgentId::court(), msg::kInterdictionAuthorized, s.session_id,
                                       now, record);
        s.transcript.push_back(court);
        result.out.push_back(court);
    }

    s.case_label = case_label;
    s.outcome = decision;
    s.decided_at = now;
    s.phase = Phase::Closed;
    s.claim_pending = false;
    ++s.timer_epoch;
    active_by_drone_.erase({s.drone_id.value(), s.protocol});
    return result;
}

DispatchResult Engine::on_timer(const TimerRequest& timer, TimestampMs now) {
    auto it = sessions_.find(timer.session_id);
    if (it == sessions_.end()) return {};
    ProtocolSession& s = it->second;
    if (s.closed() || timer.epoch != s.timer_epoch) return {}; // stale

    switch (timer.kind) {
    case TimerKind::DiagnosisDue:
        if (s.phase != Phase::AwaitDiagnosis) return {};
        return run_diagnosis(s, now);
    case TimerKind::OperatorTimeout: {
        if (s.phase != Phase::AwaitOperator) return {};
        // Silence past the timeout is CASE 1 in every operator protocol.
        if (s.protocol == 1) return decide(s, "CASE1", Decision::immediate(), false, false, now);
        return decide(s, "CASE1", Decision::timed(config_.timed_interdiction_timeout_s), true, false,
                      now);
    }
    case TimerKind::ConfirmWindow: {
        if (s.phase != Phase::AwaitConfirm) return {};
        // Explicit mode expects a reply: silence invalidates the claim.
        // Implicit mode treats a quiet window as confirmation.
        if (config_.confirmation == ConfirmationMode::Explicit) return invalidated_claim(s, now);
        return handle_confirmation_timeout_implicit(s, now);
    }
    }
    return {};
}

DispatchResult Engine::handle_confirmation_timeout_implicit(ProtocolSession& s, TimestampMs now) {
    const char* case_label = nullptr;
    switch (s.protocol) {
    case 1: case_label = "CASE5"; break;
    case 3: case_label = "CASE2"; break;
    case 4: case_label = "CASE3"; break;
    case 5: case_label = "CASE2"; break;
    case 7: case_label = "CASE4"; break;
    case 8: case_label = "CASE4"; break;
    default: case_label = "CASE?"; break;
    }
    return decide(s, case_label, Decision::of(DecisionKind::RestorationConfirmed), false, false, now);
}

void Engine::cancel_session(const std::string& session_id, TimestampMs now) {
    auto it = sessions_.find(session_id);
    if (it == sessions_.end() || it->second.closed()) return;
    ProtocolSession& s = it->second;
    s.cancelled = true;
    s.cancelled_at = now;
    s.phase = Phase::Closed;
    ++s.timer_epoch;
    active_by_drone_.erase({s.drone_id.value(), s.protocol});
}

std::size_t Engine::cancel_sessions_from(const AgentId& agent, TimestampMs now) {
    std::size_t cancelled = 0;
    for (auto& [sid, session] : sessions_) {
        if (session.closed() || session.cuas != agent) continue;
        cancel_session(sid, now);
        ++cancelled;
    }
    return cancelled;
}

// ---------------------------------------------------------------------------
// Synchronous driver.

Envelope build_opener(int protocol, const DroneId& drone, const AgentId& cuas,
                      const std::string& session_id, TimestampMs now, const RiskContext& risk,
                      const registry::Registry& registry, const domain::Zone* cuas_zone) {
    json payload{{"drone_id", drone.value()}, {"risk", risk_to_json(risk)}};
    if (protocol == 1) {
        std::optional<registry::MissionAuthorization> potential;
        if (cuas_zone != nullptr) {
            auto candidates = registry.find_potential_operators(*cuas_zone, now);
            if (!candidates.empty()) potential = candidates.front();
        }
        if (!potential) throw std::logic_error("protocol 1 requires a potential operator");
        payload["potential_operator"] = potential->operator_id.to_hex();
        payload["potential_drone"] = potential->drone_id.value();
    }
    if (protocol == 7 || protocol == 8) {
        if (auto rec = registry.raw_id_record(drone)) payload["operator"] = rec->operator_id.to_hex();
    }
    Envelope e;
    e.msg_id = 0; // assigned by the transport
    e.correlation_id = session_id;
    e.sender = cuas;
    e.recipient = AgentId::authority();
    e.msg_type = opener_label(protocol);
    e.sent_at = now;
    e.payload = std::move(payload);
    return e;
}

namespace {

const domain::Zone& whole_world_zone() {
    static const domain::Zone zone({domain::GeoPoint(-80, -170), domain::GeoPoint(-80, 170),
                                    domain::GeoPoint(80, 170), domain::GeoPoint(80, -170)});
    return zone;
}

} // namespace

SyncRunner::SyncRunner(std::shared_ptr<registry::Registry> registry, RiskPolicy risk,
                       EngineConfig config, RepairPolicy repair, OperatorDirectory directory)
    : engine_(std::move(registry), std::move(risk), config, std::move(repair),
              std::move(directory)) {}

ProtocolRun SyncRunner::run(int protocol, const DroneId& drone, const ScriptedResponder& responder,
                            RiskContext risk_context) {
    const std::string session_id =
        "sync-" + drone.value() + "-p" + std::to_string(protocol) + "-" + std::to_string(++seq_);
    const AgentId cuas = AgentId::cuas(0);
    const TimestampMs t0 = now_;

    struct PendingEvent {
        TimestampMs at = 0;
        std::uint64_t seq = 0;
        std::optional<Envelope> inbound; // message for the authority
        std::optional<TimerRequest> timer;
    };
    std::vector<PendingEvent> queue;
    std::uint64_t seq = 0;
    auto push_msg = [&](TimestampMs at, Envelope e) {
        queue.push_back({at, ++seq, std::move(e), std::nullopt});
    };
    auto push_timer = [&](const TimerRequest& t) {
        queue.push_back({t.due_at, ++seq, std::nullopt, t});
    };

    ProtocolRun run_result;
    run_result.session_id = session_id;
    run_result.opened_at = t0;

    push_msg(t0, build_opener(protocol, drone, cuas, session_id, t0, risk_context,
                              engine_.registry(), &whole_world_zone()));

    const ConfirmationMode mode = engine_.config().confirmation;
    int safety = 0;

    auto handle_out = [&](const Envelope& e, TimestampMs at) {
        run_result.outbound.push_back(e);
        if (e.msg_type == msg::kError) {
            const std::string code = e.payload.value("error", "");
            if (code == "IllegalResponse")
                throw IllegalResponse(e.payload.value("detail", "illegal response"));
            throw std::runtime_error("protocol error: " + code);
        }
        if (e.recipient.role == Role::Operator) {
            if (e.msg_type == msg::kStopMission) run_result.stop_order_sent = true;
            if (e.msg_type == msg::kCompleteMission) run_result.complete_order_sent = true;
            const bool is_request = e.msg_type == msg::kCheckRestoreId ||
                                    e.msg_type == msg::kReturnToArea ||
                                    e.msg_type == msg::kStopIfTimeExceeded;
            if (is_request && responder.response.has_value()) {
                Envelope reply;
                reply.correlation_id = session_id;
                reply.sender = e.recipient;
                reply.recipient = AgentId::authority();
                reply.msg_type = response_label(*responder.response);
                reply.sent_at = at + responder.think_ms;
                reply.payload = json{{"drone_id", drone.value()}};
                push_msg(at + responder.think_ms, std::move(reply));
            }
            return;
        }
        if (e.recipient.role == Role::Court) {
            run_result.interdiction_logged = true;
            return;
        }
        // Messages to the CUAS: answer confirmation requests the way the
        // CUAS agent would, by re-checking.
        const bool is_confirm_request =
            e.msg_type == msg::kConfirmIdRestoration || e.msg_type == msg::kConfirmDbRestoration ||
            e.msg_type == msg::kConfirmValidIdEntry || e.msg_type == msg::kVerifyReturnToArea ||
            e.msg_type == msg::kVerifyMissionStop;
        if (!is_confirm_request) return;

        bool confirmed = false;
        registry::Registry& reg = engine_.registry();
        if (e.msg_type == msg::kConfirmIdRestoration) {
            confirmed = protocol == 1
                            ? responder.post_claim_ok
                            : reg.lookup_id(drone, registry::AccessLevel::Officials).has_value();
        } else if (e.msg_type == msg::kConfirmDbRestoration) {
            auto expiry = reg.reported_expiry(drone);
            confirmed = expiry.has_value() && *expiry > at &&
                        reg.find_authorization_any(drone, t0).has_value();
        } else if (e.msg_type == msg::kConfirmValidIdEntry) {
            auto expiry = reg.reported_expiry(drone);
            confirmed = expiry.has_value() && *expiry > at;
        } else {
            confirmed = responder.post_claim_ok;
        }

        if (mode == ConfirmationMode::Explicit) {
            Envelope reply;
            reply.correlation_id = session_id;
            reply.sender = cuas;
            reply.recipient = AgentId::authority();
            reply.msg_type = confirm_reply_label(e.msg_type, confirmed);
            reply.sent_at = at;
            reply.payload = json{{"drone_id", drone.value()}, {"confirmed", confirmed}};
            push_msg(at, std::move(reply));
        } else if (!confirmed) {
            // Implicit invalidation: the CUAS re-sends the opener for the
            // still-unresolved situation.
            push_msg(at, build_opener(protocol, drone, cuas, session_id, at, risk_context,
                                      engine_.registry(), &whole_world_zone()));
        }
        // Implicit confirmation is silence; the window timer closes the case.
    };

    while (true) {
        const ProtocolSession* s = engine_.find_session(session_id);
        if (s != nullptr && s->closed()) break;
        if (queue.empty()) throw std::runtime_error("protocol run stalled without a decision");
        if (++safety > 1000) throw std::runtime_error("protocol run did not terminate");

        auto next = std::min_element(queue.begin(), queue.end(),
                                     [](const PendingEvent& a, const PendingEvent& b) {
                                         return std::tie(a.at, a.seq) < std::tie(b.at, b.seq);
                                     });
        PendingEvent event = std::move(*next);
        queue.erase(next);
        now_ = std::max(now_, event.at);

        DispatchResult result;
        if (event.inbound) {
            result = engine_.dispatch(*event.inbound, now_);
        } else {
            result = engine_.on_timer(*event.timer, now_);
        }
        for (const auto& timer : result.timers) push_timer(timer);
        for (const auto& e : result.out) handle_out(e, now_);
    }

    const ProtocolSession* s = engine_.find_session(session_id);
    run_result.case_label = s->case_label.value_or("?");
    run_result.decision = s->outcome.value_or(Decision::of(DecisionKind::RestorationConfirmed));
    run_result.decided_at = s->decided_at.value_or(now_);
    now_ += 1; // keep runs strictly ordered in time
    return run_result;
}

ProtocolRun run_protocol1(SyncRunner& r, const DroneId& d, const ScriptedResponder& s) {
    return r.run(1, d, s);
}
ProtocolRun run_protocol2(SyncRunner& r, const DroneId& d) { return r.run(2, d, {}); }
ProtocolRun run_protocol3(SyncRunner& r, const DroneId& d) { return r.run(3, d, {}); }
ProtocolRun run_protocol4(SyncRunner& r, const DroneId& d) { return r.run(4, d, {}); }
ProtocolRun run_protocol5(SyncRunner& r, const DroneId& d) { return r.run(5, d, {}); }
ProtocolRun run_protocol6(SyncRunner& r, const DroneId& d, RiskContext risk) {
    return r.run(6, d, {}, std::move(risk));
}
ProtocolRun run_protocol7(SyncRunner& r, const DroneId& d, const ScriptedResponder& s,
                          RiskContext risk) {
    return r.run(7, d, s, std::move(risk));
}
ProtocolRun run_protocol8(SyncRunner& r, const DroneId& d, const ScriptedResponder& s,
                          RiskContext risk) {
    return r.run(8, d, s, std::move(risk));
}

} // namespace cuasim::clarify
