#include "cuasim/netsim.hpp"

#include <algorithm>
#include <stdexcept>

namespace cuasim::netsim {

using clarify::msg::kAuthDbMissResolved;
using clarify::msg::kClarificationClosed;
using clarify::msg::kCompleteMission;
using clarify::msg::kConfirmDbRestoration;
using clarify::msg::kConfirmIdRestoration;
using clarify::msg::kConfirmValidIdEntry;
using clarify::msg::kError;
using clarify::msg::kImmediateInterdictionAuth;
using clarify::msg::kInterdictAfterTimeout;
using clarify::msg::kInterdictImmediately;
using clarify::msg::kInterdictionReport;
using clarify::msg::kStopMission;
using clarify::msg::kTimedInterdictionAuth;
using clarify::msg::kTolerateAuthFailure;
using clarify::msg::kTolerateExpiredId;
using clarify::msg::kTolerateIdFailure;
using clarify::msg::kTolerateMission;
using clarify::msg::kVerificationInProgress;
using clarify::msg::kVerifyMissionStop;
using clarify::msg::kVerifyReturnToArea;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Agent ids and the envelope codec.

const char* to_string(Role role) {
    switch (role) {
    case Role::Authority: return "authority";
    case Role::Cuas: return "cuas";
    case Role::Operator: return "operator";
    case Role::Court: return "court";
    }
    return "?";
}

std::optional<Role> role_from_string(const std::string& name) {
    if (name == "authority") return Role::Authority;
    if (name == "cuas") return Role::Cuas;
    if (name == "operator") return Role::Operator;
    if (name == "court") return Role::Court;
    return std::nullopt;
}

std::string AgentId::to_string() const {
    if (role == Role::Authority) return "authority";
    if (role == Role::Court) return "court";
    return std::string(netsim::to_string(role)) + "-" + std::to_string(index);
}

AgentId AgentId::parse(const std::string& text) {
    if (text == "authority") return authority();
    if (text == "court") return court();
    const auto dash = text.rfind('-');
    if (dash == std::string::npos) throw std::invalid_argument("bad agent id: " + text);
    auto role = role_from_string(text.substr(0, dash));
    if (!role) throw std::invalid_argument("bad agent id: " + text);
    return AgentId{*role, std::stoi(text.substr(dash + 1))};
}

nlohmann::ordered_json Envelope::to_json() const {
    nlohmann::ordered_json j;
    j["msg_id"] = msg_id;
    j["correlation_id"] = correlation_id;
    j["sender"] = sender.to_string();
    j["recipient"] = recipient.to_string();
    j["msg_type"] = msg_type;
    j["sent_at"] = sent_at;
    j["payload"] = payload;
    return j;
}

Envelope Envelope::from_json(const json& j) {
    Envelope e;
    e.msg_id = j.at("msg_id").get<std::uint64_t>();
    e.correlation_id = j.at("correlation_id").get<std::string>();
    e.sender = AgentId::parse(j.at("sender").get<std::string>());
    e.recipient = AgentId::parse(j.at("recipient").get<std::string>());
    e.msg_type = j.at("msg_type").get<std::string>();
    e.sent_at = j.at("sent_at").get<domain::TimestampMs>();
    e.payload = j.value("payload", json::object());
    return e;
}

std::string Envelope::to_transcript_line(domain::TimestampMs delivered_at) const {
    nlohmann::ordered_json j = to_json();
    j["delivered_at"] = delivered_at;
    return j.dump();
}

std::pair<Envelope, domain::TimestampMs> Envelope::from_transcript_line(const std::string& line) {
    json j = json::parse(line);
    return {Envelope::from_json(j), j.value("delivered_at", domain::TimestampMs{0})};
}

std::string transcript_to_jsonl(const std::vector<std::pair<Envelope, TimestampMs>>& transcript) {
    std::string out;
    for (const auto& [envelope, delivered_at] : transcript) {
        out += envelope.to_transcript_line(delivered_at);
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Delays.

TimestampMs Rng::uniform(TimestampMs lo, TimestampMs hi) {
    if (hi <= lo) return lo;
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    // Rejection sampling keeps the draw unbiased and reproducible.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t draw = next();
    while (draw >= limit) draw = next();
    return lo + static_cast<TimestampMs>(draw % span);
}

LatencySpec DelayModel::edge(Role sender, Role recipient) const {
    auto it = edge_overrides.find({sender, recipient});
    return it == edge_overrides.end() ? default_edge : it->second;
}

// ---------------------------------------------------------------------------
// Authority agent.

void AuthorityAgent::emit(const clarify::DispatchResult& result, Context& ctx) {
    for (const auto& e : result.out) ctx.send(e);
    for (const auto& timer : result.timers) {
        TimerToken token;
        token.key = "engine";
        token.data = {{"session_id", timer.session_id},
                      {"kind", static_cast<int>(timer.kind)},
                      {"due_at", timer.due_at},
                      {"epoch", timer.epoch}};
        ctx.set_timer(std::max<TimestampMs>(0, timer.due_at - ctx.now()), token);
    }
}

void AuthorityAgent::on_message(const Envelope& e, Context& ctx) {
    emit(engine_->dispatch(e, ctx.now()), ctx);
}

void AuthorityAgent::on_timer(const TimerToken& token, Context& ctx) {
    if (token.key != "engine") return;
    clarify::TimerRequest req;
    req.session_id = token.data.at("session_id").get<std::string>();
    req.kind = static_cast<clarify::TimerKind>(token.data.at("kind").get<int>());
    req.due_at = token.data.at("due_at").get<TimestampMs>();
    req.epoch = token.data.at("epoch").get<std::uint64_t>();
    emit(engine_->on_timer(req, ctx.now()), ctx);
}

// ---------------------------------------------------------------------------
// Operator agent.

void OperatorAgent::on_message(const Envelope& e, Context& ctx) {
    if (e.msg_type == kStopMission || e.msg_type == kCompleteMission ||
        e.msg_type == kVerificationInProgress || e.msg_type == kError) {
        orders_.push_back(e.msg_type);
        return;
    }
    auto it = scripts_.find(e.msg_type);
    if (it == scripts_.end()) return;
    const OperatorScript& script = it->second;
    if (!script.response) return; // scripted silence
    TimerToken token;
    token.key = "respond";
    token.data = {{"correlation_id", e.correlation_id},
                  {"msg_type", clarify::response_label(*script.response)},
                  {"drone_id", e.payload.value("drone_id", std::string{})}};
    ctx.set_timer(script.think_ms, token);
}

void OperatorAgent::on_timer(const TimerToken& token, Context& ctx) {
    if (token.key != "respond") return;
    Envelope reply;
    reply.correlation_id = token.data.at("correlation_id").get<std::string>();
    reply.sender = id();
    reply.recipient = AgentId::authority();
    reply.msg_type = token.data.at("msg_type").get<std::string>();
    reply.payload = {{"drone_id", token.data.at("drone_id").get<std::string>()}};
    ctx.send(std::move(reply));
}

// ---------------------------------------------------------------------------
// CUAS agent.

namespace {

domain::GeoPoint zone_centroid(const domain::Zone& zone) {
    double lat = 0, lon = 0;
    for (const auto& v : zone.vertices()) {
        lat += v.lat;
        lon += v.lon;
    }
    const double n = static_cast<double>(zone.vertices().size());
    return domain::GeoPoint(lat / n, lon / n);
}

bool is_decision_message(const std::string& type) {
    return type == kInterdictImmediately || type == kImmediateInterdictionAuth ||
           type == kInterdictAfterTimeout || type == kTimedInterdictionAuth ||
           type == kTolerateIdFailure || type == kTolerateExpiredId ||
           type == kTolerateAuthFailure || type == kTolerateMission ||
           type == kAuthDbMissResolved || type == kClarificationClosed;
}

bool is_confirm_request(const std::string& type) {
    return type == kConfirmIdRestoration || type == kConfirmDbRestoration ||
           type == kConfirmValidIdEntry || type == kVerifyReturnToArea ||
           type == kVerifyMissionStop;
}

} // namespace

CuasAgent::CuasAgent(int index, CuasConfig config, std::shared_ptr<registry::Registry> registry,
                     std::vector<DroneScript> drones)
    : index_(index), config_(std::move(config)), registry_(std::move(registry)) {
    if (config_.access_level < registry::AccessLevel::Officials)
        throw std::invalid_argument("CUAS needs at least Officials access to check expiry");
    for (auto& script : drones) {
        Episode ep;
        ep.script = std::move(script);
        episodes_.emplace(ep.script.drone.value(), std::move(ep));
    }
}

CuasAgent::Episode& CuasAgent::episode_for(const std::string& drone) {
    auto it = episodes_.find(drone);
    if (it == episodes_.end()) throw std::logic_error("unknown drone: " + drone);
    return it->second;
}

void CuasAgent::on_start(Context& ctx) {
    // Peak-load shape: every scripted drone is detected at scenario start.
    for (auto& [drone, ep] : episodes_) {
        TimerToken token{"detect", {{"drone_id", drone}}};
        ctx.set_timer(0, token);
    }
}

bool CuasAgent::rid_on_air(const Episode& ep) const {
    if (ep.mission_stopped) return false;
    if (ep.script.rid != DroneScript::Rid::None) return true;
    return ep.rid_restored;
}

domain::GeoPoint CuasAgent::current_position(const Episode& ep) const {
    if (ep.returned_to_area) {
        auto it = cached_auth_.find(ep.script.drone.value());
        if (it != cached_auth_.end()) return zone_centroid(it->second.area);
    }
    return ep.script.position;
}

domain::Zone CuasAgent::vicinity_zone(const Episode& ep) const {
    const domain::GeoPoint at = current_position(ep);
    const double r = 0.0002;
    return domain::Zone({domain::GeoPoint(at.lat - r, at.lon - r),
                         domain::GeoPoint(at.lat - r, at.lon + r),
                         domain::GeoPoint(at.lat + r, at.lon + r),
                         domain::GeoPoint(at.lat + r, at.lon - r)});
}

domain::RemoteIdMessage CuasAgent::make_rid(const Episode& ep, TimestampMs now) const {
    std::vector<std::uint8_t> token;
    if (ep.script.rid == DroneScript::Rid::Fake) {
        token.assign(16, 0xAB);
    } else {
        token = registry_->issue_token(ep.script.drone, config_.issuer_key_ref);
    }
    return domain::RemoteIdMessage::make(ep.script.drone, ep.script.position, 5.0,
                                         ep.script.position, now, ep.script.risk.emergency,
                                         std::move(token), now);
}

std::optional<registry::MissionAuthorization>
CuasAgent::relevant_authorization(Episode& ep, TimestampMs now) {
    auto fresh = registry_->find_authorization_any(ep.script.drone, now);
    if (fresh) {
        cached_auth_.insert_or_assign(ep.script.drone.value(), *fresh);
        return fresh;
    }
    auto it = cached_auth_.find(ep.script.drone.value());
    if (it != cached_auth_.end()) return it->second; // the mission the drone was flying
    return std::nullopt;
}

void CuasAgent::on_timer(const TimerToken& token, Context& ctx) {
    const std::string drone = token.data.value("drone_id", std::string{});
    if (drone.empty()) return;
    Episode& ep = episode_for(drone);
    if (ep.done) return;

    if (token.key == "detect") {
        start_detection(ep, ctx);
    } else if (token.key == "rid_timeout") {
        ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::RidTimeout));
        // Potential operators are searched where the silent drone actually
        // flies, not across the whole operation zone.
        auto potentials = registry_->find_potential_operators(vicinity_zone(ep), ctx.now());
        if (!potentials.empty()) {
            ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::PotentialOperatorFound));
            open_session(ep, 1, ctx);
        } else {
            ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::NoPotentialOperator));
            local_interdiction(ep, ctx);
        }
    } else if (token.key == "recheck") {
        ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::ObjectClassifiedAsDrone));
        run_checks(ep, ctx);
    } else if (token.key == "confirm_recheck") {
        const std::string request = token.data.value("request", std::string{});
        const bool implicit = token.data.value("implicit", false);
        const TimestampMs now = ctx.now();

        // The drone's claimed fix becomes observable now, per its script.
        if (request == kConfirmIdRestoration && ep.active_protocol == 1)
            ep.rid_restored = ep.script.restore_after_claim;
        if (request == kVerifyReturnToArea) ep.returned_to_area = ep.script.returns_to_area;
        if (request == kVerifyMissionStop) ep.mission_stopped = ep.script.stops_when_claimed;

        bool confirmed = false;
        if (request == kConfirmIdRestoration) {
            confirmed = ep.active_protocol == 1
                            ? rid_on_air(ep)
                            : registry_->lookup_id(ep.script.drone, config_.access_level).has_value();
        } else if (request == kConfirmDbRestoration) {
            auto expiry = registry_->reported_expiry(ep.script.drone);
            confirmed = expiry.has_value() && *expiry > now &&
                        registry_->find_authorization_any(ep.script.drone, now).has_value();
        } else if (request == kConfirmValidIdEntry) {
            auto expiry = registry_->reported_expiry(ep.script.drone);
            confirmed = expiry.has_value() && *expiry > now;
        } else if (request == kVerifyReturnToArea) {
            auto it = cached_auth_.find(drone);
            confirmed = it != cached_auth_.end() &&
                        domain::point_in_zone(current_position(ep), it->second.area);
        } else if (request == kVerifyMissionStop) {
            confirmed = !rid_on_air(ep);
        }

        if (!implicit) {
            Envelope reply;
            reply.correlation_id = ep.active_session;
            reply.sender = id();
            reply.recipient = AgentId::authority();
            reply.msg_type = clarify::confirm_reply_label(request, confirmed);
            reply.payload = {{"drone_id", drone}, {"confirmed", confirmed}};
            ctx.send(std::move(reply));
        } else {
            // Implicit mode: return to DroneDetected and re-run the checks.
            // A still-broken situation re-opens the session, which the
            // authority reads as the invalidation.
            ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::ObjectClassifiedAsDrone));
            run_checks(ep, ctx);
        }
    } else if (token.key == "interdict_done") {
        Envelope report;
        report.correlation_id = token.data.value("session_id", std::string{});
        report.sender = id();
        report.recipient = AgentId::authority();
        report.msg_type = kInterdictionReport;
        report.payload = {{"drone_id", drone},
                          {"state", fsm::to_string(ep.machine.state())},
                          {"executed_at", ctx.now()}};
        ctx.send(std::move(report));
        end_episode(ep, ctx);
    }
}

void CuasAgent::start_detection(Episode& ep, Context& ctx) {
    ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::ObjectClassifiedAsDrone));
    ep.detection_ts = ctx.now();
    run_checks(ep, ctx);
}

void CuasAgent::run_checks(Episode& ep, Context& ctx) {
    if (rid_on_air(ep)) {
        ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::RidReceived));
        identity_checks(ep, ctx);
    } else {
        TimerToken token{"rid_timeout", {{"drone_id", ep.script.drone.value()}}};
        ctx.set_timer(config_.rid_listen_ms, token);
    }
}

void CuasAgent::identity_checks(Episode& ep, Context& ctx) {
    const TimestampMs now = ctx.now();
    const auto rid = make_rid(ep, now);

    if (!registry_->verify_authenticity(rid)) {
        ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::AuthenticityFail));
        local_interdiction(ep, ctx);
        return;
    }
    ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::AuthenticityOk));

    auto view = registry_->lookup_id(ep.script.drone, config_.access_level);
    if (!view) {
        ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::IdDbMiss));
        auto auth = registry_->find_authorization(ep.script.drone, now, current_position(ep));
        if (auth) {
            cached_auth_.insert_or_assign(ep.script.drone.value(), *auth);
            ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::AuthDbHit));
            open_session(ep, 3, ctx);
        } else {
            ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::AuthDbMiss));
            open_session(ep, 2, ctx);
        }
        return;
    }
    ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::IdDbHit));

    if (!view->expiry || *view->expiry <= now) {
        ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::IdExpired));
        auto auth = registry_->find_authorization(ep.script.drone, now, current_position(ep));
        if (auth) {
            cached_auth_.insert_or_assign(ep.script.drone.value(), *auth);
            ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::AuthDbHit));
            open_session(ep, 5, ctx);
        } else {
            ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::AuthDbMiss));
            open_session(ep, 4, ctx);
        }
        return;
    }
    ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::IdValid));
    auth_checks(ep, ctx);
}

void CuasAgent::auth_checks(Episode& ep, Context& ctx) {
    auto auth = relevant_authorization(ep, ctx.now());
    if (!auth) {
        ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::AuthDbMiss));
        open_session(ep, 6, ctx);
        return;
    }
    ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::AuthDbHit));
    compliance_checks(ep, *auth, ctx);
}

void CuasAgent::compliance_checks(Episode& ep, const registry::MissionAuthorization& auth,
                                  Context& ctx) {
    const TimestampMs now = ctx.now();
    if (!domain::point_in_zone(current_position(ep), auth.area)) {
        ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::AreaViolated));
        open_session(ep, 7, ctx);
        return;
    }
    ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::AreaOk));

    if (now >= auth.window.end) {
        ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::TimeViolated));
        open_session(ep, 8, ctx);
        return;
    }
    ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::TimeOk));

    ++ep.loops_done;
    // While a session awaits its closing decision (implicit confirmation in
    // flight), keep looping instead of ending the episode under it.
    if (ep.loops_done >= ep.script.green_loops && !ep.awaiting_decision) {
        end_episode(ep, ctx);
    } else {
        TimerToken token{"recheck", {{"drone_id", ep.script.drone.value()}}};
        ctx.set_timer(config_.recheck_period_ms, token);
    }
}

void CuasAgent::open_session(Episode& ep, int protocol, Context& ctx) {
    // Re-sending the opener under the same correlation id is the implicit
    // invalidation of a pending claim; anything else is a fresh session.
    const bool reopen = config_.confirmation == clarify::ConfirmationMode::Implicit &&
                        ep.awaiting_decision && ep.active_protocol == protocol &&
                        !ep.active_session.empty();
    if (!reopen) {
        ep.active_session = id().to_string() + "/" + ep.script.drone.value() + "/p" +
                            std::to_string(protocol) + "/" + std::to_string(++session_seq_);
        ++ep.sessions_opened;
    }
    ep.active_protocol = protocol;
    ep.awaiting_decision = true;
    const domain::Zone vicinity = vicinity_zone(ep);
    ctx.send(clarify::build_opener(protocol, ep.script.drone, id(), ep.active_session, ctx.now(),
                                   ep.script.risk, *registry_,
                                   protocol == 1 ? &vicinity : &config_.zone));
}

void CuasAgent::local_interdiction(Episode& ep, Context& ctx) {
    // Uncooperative classification: the decision needs no clarification, only
    // a report so the authority can log it.
    const std::string reason = fsm::to_string(ep.machine.state());
    ep.machine.apply(fsm::CheckEvent::protocol_outcome(domain::DecisionKind::ImmediateInterdiction));
    ep.first_outcome = "local/" + reason;
    Envelope report;
    report.correlation_id = "";
    report.sender = id();
    report.recipient = AgentId::authority();
    report.msg_type = kInterdictionReport;
    report.payload = {{"drone_id", ep.script.drone.value()},
                      {"reason", reason},
                      {"executed_at", ctx.now()}};
    ctx.send(std::move(report));
    end_episode(ep, ctx);
}

void CuasAgent::on_message(const Envelope& e, Context& ctx) {
    const std::string drone = e.payload.value("drone_id", std::string{});
    if (drone.empty() || !episodes_.count(drone)) return;
    Episode& ep = episode_for(drone);
    if (ep.done) return;

    if (is_decision_message(e.msg_type)) {
        if (e.correlation_id != ep.active_session) return; // stale session
        handle_decision(ep, e, ctx);
    } else if (is_confirm_request(e.msg_type)) {
        if (e.correlation_id != ep.active_session) return;
        handle_confirm_request(ep, e, ctx);
    }
    // STOP/COMPLETE orders go to operators; ERROR envelopes are kept on the
    // transcript only.
}

void CuasAgent::handle_confirm_request(Episode& ep, const Envelope& e, Context& ctx) {
    TimerToken token{"confirm_recheck",
                     {{"drone_id", ep.script.drone.value()},
                      {"request", e.msg_type},
                      {"implicit", e.payload.value("mode", "explicit") == std::string("implicit")}}};
    ctx.set_timer(config_.confirm_recheck_ms, token);
}

void CuasAgent::handle_decision(Episode& ep, const Envelope& e, Context& ctx) {
    const std::string kind_name = e.payload.value("decision", std::string{});
    auto kind = domain::decision_kind_from_string(kind_name);
    if (!kind) return;
    const std::string case_label = e.payload.value("case", std::string{});

    ep.awaiting_decision = false;

    ClarificationRecord record;
    record.drone = ep.script.drone.value();
    record.protocol = ep.active_protocol;
    record.session_id = e.correlation_id;
    record.case_label = case_label;
    record.decision = *kind;
    record.detection_ts = ep.detection_ts;
    record.decided_ts = e.sent_at; // authority decision timestamp
    samples_.push_back(record);

    if (ep.first_outcome.empty())
        ep.first_outcome = "p" + std::to_string(ep.active_protocol) + "/" + case_label;

    // The machine may already have resumed (implicit confirmation); only
    // apply the outcome if it still sits in the protocol's trigger state.
    if (fsm::protocol_trigger(ep.machine.state()) == ep.active_protocol)
        ep.machine.apply(fsm::CheckEvent::protocol_outcome(*kind));

    if (*kind == domain::DecisionKind::ImmediateInterdiction ||
        *kind == domain::DecisionKind::TimedInterdiction) {
        const double timeout_s = e.payload.value("timeout_s", 0.0);
        finish_interdiction(ep, ctx, timeout_s, e.correlation_id);
        return;
    }
    if (ep.script.end_after_decision) {
        end_episode(ep, ctx);
        return;
    }
    resume_after_decision(ep, ctx);
}

void CuasAgent::finish_interdiction(Episode& ep, Context& ctx, double timeout_s,
                                    const std::string& session) {
    TimerToken token{"interdict_done",
                     {{"drone_id", ep.script.drone.value()}, {"session_id", session}}};
    ctx.set_timer(static_cast<TimestampMs>(timeout_s * 1000.0), token);
}

void CuasAgent::resume_after_decision(Episode& ep, Context& ctx) {
    switch (ep.machine.state()) {
    case fsm::State::TolerateIdFailure:
    case fsm::State::ValidId:
        auth_checks(ep, ctx);
        return;
    case fsm::State::TolerateAuthFailure: {
        auto auth = relevant_authorization(ep, ctx.now());
        if (auth) {
            compliance_checks(ep, *auth, ctx);
        } else {
            // Tolerated without a certificate: nothing to check against.
            ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::TimeOk));
            ++ep.loops_done;
            if (ep.loops_done >= ep.script.green_loops) end_episode(ep, ctx);
            else {
                TimerToken token{"recheck", {{"drone_id", ep.script.drone.value()}}};
                ctx.set_timer(config_.recheck_period_ms, token);
            }
        }
        return;
    }
    case fsm::State::AuthorizedMission: {
        auto auth = relevant_authorization(ep, ctx.now());
        if (auth) compliance_checks(ep, *auth, ctx);
        else end_episode(ep, ctx);
        return;
    }
    case fsm::State::IdReceived:
        identity_checks(ep, ctx);
        return;
    case fsm::State::Surveillance: // verified mission stop
        end_episode(ep, ctx);
        return;
    default:
        end_episode(ep, ctx);
        return;
    }
}

void CuasAgent::end_episode(Episode& ep, Context& ctx) {
    (void)ctx;
    if (ep.done) return;
    if (ep.machine.state() != fsm::State::Surveillance)
        ep.machine.apply(fsm::CheckEvent::of(fsm::EventKind::MissionEndedOrOutOfRange));
    ep.done = true;
    ++done_count_;
    if (done_count_ == episodes_.size() && on_all_done_) on_all_done_();
}

std::map<std::string, std::string> CuasAgent::final_states() const {
    std::map<std::string, std::string> out;
    for (const auto& [drone, ep] : episodes_) out[drone] = fsm::to_string(ep.machine.state());
    return out;
}

std::map<std::string, std::string> CuasAgent::outcomes() const {
    std::map<std::string, std::string> out;
    for (const auto& [drone, ep] : episodes_)
        out[drone] = ep.first_outcome.empty() ? "green" : ep.first_outcome;
    return out;
}

// ---------------------------------------------------------------------------
// In-process bus.

class InprocBus::BusContext final : public Context {
public:
    BusContext(InprocBus& bus, Agent& agent) : bus_(bus), agent_(agent) {}

    TimestampMs now() const override { return bus_.now_; }
    void send(Envelope e) override { bus_.send_from(agent_, std::move(e)); }
    void set_timer(TimestampMs delay_ms, TimerToken token) override {
        Agent* agent = &agent_;
        InprocBus* bus = &bus_;
        bus_.schedule(bus_.now_ + std::max<TimestampMs>(0, delay_ms),
                      [bus, agent, token = std::move(token)] {
                          auto it = bus->contexts_.find(agent->id().to_string());
                          agent->on_timer(token, *it->second);
                      });
    }

private:
    InprocBus& bus_;
    Agent& agent_;
};

InprocBus::InprocBus(DelayModel delays, std::uint64_t seed) : delays_(std::move(delays)), rng_(seed) {}

void InprocBus::add_agent(Agent& agent) {
    const std::string key = agent.id().to_string();
    if (agents_.count(key)) throw std::logic_error("duplicate agent: " + key);
    if (agent.id().role == Role::Authority)
        for (const auto& [k, a] : agents_)
            if (a->id().role == Role::Authority)
                throw std::logic_error("exactly one authority per run");
    agents_[key] = &agent;
    contexts_[key] = std::make_unique<BusContext>(*this, agent);
}

bool InprocBus::channel_open(const AgentId& a, const AgentId& b) const {
    return agents_.count(a.to_string()) > 0 && agents_.count(b.to_string()) > 0;
}

void InprocBus::schedule(TimestampMs at, std::function<void()> fire) {
    queue_.push(Event{at, ++seq_, std::move(fire)});
}

void InprocBus::send_from(Agent& sender, Envelope e) {
    e.msg_id = ++msg_ids_;
    e.sender = sender.id();
    e.sent_at = now_;

    if (delays_.drop_probability > 0.0 &&
        static_cast<double>(rng_.next() >> 11) / 9007199254740992.0 < delays_.drop_probability)
        return; // injected loss

    const auto pair_key = std::make_pair(e.sender.to_string(), e.recipient.to_string());
    const TimestampMs latency = delays_.edge(e.sender.role, e.recipient.role).sample(rng_);
    TimestampMs arrival = now_ + latency;
    auto floor_it = pair_floor_.find(pair_key);
    if (floor_it != pair_floor_.end()) arrival = std::max(arrival, floor_it->second);
    pair_floor_[pair_key] = arrival;

    TimestampMs deliver_at = arrival;
    if (e.recipient.role == Role::Authority && delays_.authority_processing_ms > 0) {
        // Single-server queue: the authority handles one inbound message at a
        // time; concurrent sessions contend here.
        const std::string server = e.recipient.to_string();
        TimestampMs start = std::max(arrival, server_free_[server]);
        deliver_at = start + delays_.authority_processing_ms;
        server_free_[server] = deliver_at;
    }

    schedule(deliver_at, [this, e = std::move(e)] { deliver(e); });
}

void InprocBus::deliver(const Envelope& e) {
    transcript_.push_back({e, now_});
    auto it = agents_.find(e.recipient.to_string());
    if (it == agents_.end()) throw std::logic_error("unknown recipient: " + e.recipient.to_string());
    auto ctx = contexts_.find(it->first);
    it->second->on_message(e, *ctx->second);
}

void InprocBus::run() {
    if (!started_) {
        started_ = true;
        for (auto& [key, agent] : agents_) agent->on_start(*contexts_[key]);
    }
    while (!queue_.empty()) {
        // priority_queue::top is const; copy out the event.
        Event event = queue_.top();
        queue_.pop();
        now_ = std::max(now_, event.at);
        event.fire();
    }
}

} // namespace cuasim::netsim
