#include "cuasim/fsm.hpp"

#include <sstream>

namespace cuasim::fsm {

CheckEvent CheckEvent::of(EventKind kind) {
    if (kind == EventKind::ProtocolOutcome)
        throw std::logic_error("ProtocolOutcome requires a decision; use protocol_outcome()");
    return CheckEvent{kind, std::nullopt};
}

CheckEvent CheckEvent::protocol_outcome(DecisionKind decision) {
    return CheckEvent{EventKind::ProtocolOutcome, decision};
}

IllegalTransition::IllegalTransition(State s, const CheckEvent& e)
    : std::logic_error(std::string("illegal transition: (") + to_string(s) + ", " +
                       fsm::to_string(e) + ")") {}

const char* to_string(State s) {
    switch (s) {
    case State::Surveillance: return "Surveillance";
    case State::DroneDetected: return "DroneDetected";
    case State::IdReceived: return "IdReceived";
    case State::NoIdReceived: return "NoIdReceived";
    case State::NoIdNoPotentialOperator: return "NoIdNoPotentialOperator";
    case State::NoIdButPotentialOperator: return "NoIdButPotentialOperator";
    case State::FakeId: return "FakeId";
    case State::IdNotInIdDb: return "IdNotInIdDb";
    case State::UnknownId: return "UnknownId";
    case State::IdKnownButNoAuth: return "IdKnownButNoAuth";
    case State::ExpiredId: return "ExpiredId";
    case State::ExpiredIdUnauthorized: return "ExpiredIdUnauthorized";
    case State::ExpiredIdButAuthorized: return "ExpiredIdButAuthorized";
    case State::ValidId: return "ValidId";
    case State::MissionNotAuthorized: return "MissionNotAuthorized";
    case State::AuthorizedMission: return "AuthorizedMission";
    case State::AreaViolation: return "AreaViolation";
    case State::TimeViolation: return "TimeViolation";
    case State::Compliant: return "Compliant";
    case State::TolerateIdFailure: return "TolerateIdFailure";
    case State::TolerateAuthFailure: return "TolerateAuthFailure";
    case State::ImmediateInterdiction: return "ImmediateInterdiction";
    case State::TimedInterdiction: return "TimedInterdiction";
    }
    return "?";
}

const char* to_string(EventKind k) {
    switch (k) {
    case EventKind::ObjectClassifiedAsDrone: return "ObjectClassifiedAsDrone";
    case EventKind::RidReceived: return "RidReceived";
    case EventKind::RidTimeout: return "RidTimeout";
    case EventKind::AuthenticityOk: return "AuthenticityOk";
    case EventKind::AuthenticityFail: return "AuthenticityFail";
    case EventKind::IdDbHit: return "IdDbHit";
    case EventKind::IdDbMiss: return "IdDbMiss";
    case EventKind::IdValid: return "IdValid";
    case EventKind::IdExpired: return "IdExpired";
    case EventKind::AuthDbHit: return "AuthDbHit";
    case EventKind::AuthDbMiss: return "AuthDbMiss";
    case EventKind::PotentialOperatorFound: return "PotentialOperatorFound";
    case EventKind::NoPotentialOperator: return "NoPotentialOperator";
    case EventKind::AreaOk: return "AreaOk";
    case EventKind::AreaViolated: return "AreaViolated";
    case EventKind::TimeOk: return "TimeOk";
    case EventKind::TimeViolated: return "TimeViolated";
    case EventKind::ProtocolOutcome: return "ProtocolOutcome";
    case EventKind::MissionEndedOrOutOfRange: return "MissionEndedOrOutOfRange";
    }
    return "?";
}

std::string to_string(const CheckEvent& e) {
    if (e.kind == EventKind::ProtocolOutcome)
        return std::string("ProtocolOutcome(") + domain::to_string(*e.outcome) + ")";
    return to_string(e.kind);
}

Color color(State s) {
    switch (s) {
    case State::Surveillance:
    case State::DroneDetected:
    case State::IdReceived:
    case State::ValidId:
    case State::AuthorizedMission:
    case State::Compliant:
    case State::TolerateIdFailure:
    case State::TolerateAuthFailure:
        return Color::Green;
    case State::FakeId:
    case State::NoIdNoPotentialOperator:
    case State::ImmediateInterdiction:
    case State::TimedInterdiction:
        return Color::Red;
    default:
        return Color::Orange;
    }
}

const char* to_string(Color c) {
    switch (c) {
    case Color::Green: return "Green";
    case Color::Orange: return "Orange";
    case Color::Red: return "Red";
    }
    return "?";
}

namespace {

std::vector<Edge> build_table() {
    using E = EventKind;
    using D = DecisionKind;
    std::vector<Edge> t;
    auto edge = [&t](State from, E kind, State to) { t.push_back({from, CheckEvent::of(kind), to}); };
    auto outcome = [&t](State from, D d, State to) {
        t.push_back({from, CheckEvent::protocol_outcome(d), to});
    };

    edge(State::Surveillance, E::ObjectClassifiedAsDrone, State::DroneDetected);

    edge(State::DroneDetected, E::RidReceived, State::IdReceived);
    edge(State::DroneDetected, E::RidTimeout, State::NoIdReceived);
    edge(State::DroneDetected, E::MissionEndedOrOutOfRange, State::Surveillance);

    // The identity checks run from IdReceived: passing authenticity and the
    // ID-DB presence check keeps the machine there until the expiry verdict.
    edge(State::IdReceived, E::AuthenticityOk, State::IdReceived);
    edge(State::IdReceived, E::AuthenticityFail, State::FakeId);
    edge(State::IdReceived, E::IdDbHit, State::IdReceived);
    edge(State::IdReceived, E::IdDbMiss, State::IdNotInIdDb);
    edge(State::IdReceived, E::IdValid, State::ValidId);
    edge(State::IdReceived, E::IdExpired, State::ExpiredId);
    edge(State::IdReceived, E::MissionEndedOrOutOfRange, State::Surveillance);

    edge(State::NoIdReceived, E::PotentialOperatorFound, State::NoIdButPotentialOperator);
    edge(State::NoIdReceived, E::NoPotentialOperator, State::NoIdNoPotentialOperator);
    edge(State::NoIdReceived, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Uncooperative classifications move straight to interdiction.
    outcome(State::NoIdNoPotentialOperator, D::ImmediateInterdiction, State::ImmediateInterdiction);
    outcome(State::FakeId, D::ImmediateInterdiction, State::ImmediateInterdiction);

    edge(State::IdNotInIdDb, E::AuthDbHit, State::IdKnownButNoAuth);
    edge(State::IdNotInIdDb, E::AuthDbMiss, State::UnknownId);
    edge(State::IdNotInIdDb, E::MissionEndedOrOutOfRange, State::Surveillance);

    edge(State::ExpiredId, E::AuthDbHit, State::ExpiredIdButAuthorized);
    edge(State::ExpiredId, E::AuthDbMiss, State::ExpiredIdUnauthorized);
    edge(State::ExpiredId, E::MissionEndedOrOutOfRange, State::Surveillance);

    edge(State::ValidId, E::AuthDbHit, State::AuthorizedMission);
    edge(State::ValidId, E::AuthDbMiss, State::MissionNotAuthorized);
    edge(State::ValidId, E::MissionEndedOrOutOfRange, State::Surveillance);

    edge(State::AuthorizedMission, E::AreaOk, State::AuthorizedMission);
    edge(State::AuthorizedMission, E::AreaViolated, State::AreaViolation);
    edge(State::AuthorizedMission, E::TimeOk, State::Compliant);
    edge(State::AuthorizedMission, E::TimeViolated, State::TimeViolation);
    edge(State::AuthorizedMission, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Compliant loops back for the next round of checks until the drone has
    // completed its mission or left the detection range.
    edge(State::Compliant, E::ObjectClassifiedAsDrone, State::DroneDetected);
    edge(State::Compliant, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Protocol 1: clarify missing ID transmission.
    outcome(State::NoIdButPotentialOperator, D::ImmediateInterdiction, State::ImmediateInterdiction);
    outcome(State::NoIdButPotentialOperator, D::TimedInterdiction, State::TimedInterdiction);
    outcome(State::NoIdButPotentialOperator, D::TolerateIdFailure, State::TolerateIdFailure);
    outcome(State::NoIdButPotentialOperator, D::RestorationConfirmed, State::IdReceived);
    edge(State::NoIdButPotentialOperator, E::ObjectClassifiedAsDrone, State::DroneDetected);
    edge(State::NoIdButPotentialOperator, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Protocol 2: clarify unknown ID.
    outcome(State::UnknownId, D::ImmediateInterdiction, State::ImmediateInterdiction);
    outcome(State::UnknownId, D::TimedInterdiction, State::TimedInterdiction);
    outcome(State::UnknownId, D::TolerateAuthFailure, State::TolerateAuthFailure);
    edge(State::UnknownId, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Protocol 3: clarify missing ID in ID-DB. Escalation to protocol-2
    // semantics can surface any of that protocol's decisions here.
    outcome(State::IdKnownButNoAuth, D::TolerateIdFailure, State::TolerateIdFailure);
    outcome(State::IdKnownButNoAuth, D::RestorationConfirmed, State::IdReceived);
    outcome(State::IdKnownButNoAuth, D::ImmediateInterdiction, State::ImmediateInterdiction);
    outcome(State::IdKnownButNoAuth, D::TimedInterdiction, State::TimedInterdiction);
    outcome(State::IdKnownButNoAuth, D::TolerateAuthFailure, State::TolerateAuthFailure);
    edge(State::IdKnownButNoAuth, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Protocol 4: clarify unauthorized and expired ID.
    outcome(State::ExpiredIdUnauthorized, D::TimedInterdiction, State::TimedInterdiction);
    outcome(State::ExpiredIdUnauthorized, D::TolerateAuthFailure, State::TolerateAuthFailure);
    outcome(State::ExpiredIdUnauthorized, D::RestorationConfirmed, State::ValidId);
    edge(State::ExpiredIdUnauthorized, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Protocol 5: clarify authorized but expired ID. Escalates to protocol 4.
    outcome(State::ExpiredIdButAuthorized, D::TolerateIdFailure, State::TolerateIdFailure);
    outcome(State::ExpiredIdButAuthorized, D::RestorationConfirmed, State::ValidId);
    outcome(State::ExpiredIdButAuthorized, D::TimedInterdiction, State::TimedInterdiction);
    outcome(State::ExpiredIdButAuthorized, D::TolerateAuthFailure, State::TolerateAuthFailure);
    edge(State::ExpiredIdButAuthorized, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Protocol 6: clarify missing performance authorization.
    outcome(State::MissionNotAuthorized, D::IssueResolved, State::ValidId);
    outcome(State::MissionNotAuthorized, D::TimedInterdiction, State::TimedInterdiction);
    outcome(State::MissionNotAuthorized, D::TolerateMission, State::TolerateAuthFailure);
    edge(State::MissionNotAuthorized, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Protocol 7: clarify area violation.
    outcome(State::AreaViolation, D::TimedInterdiction, State::TimedInterdiction);
    outcome(State::AreaViolation, D::TolerateMission, State::TolerateAuthFailure);
    outcome(State::AreaViolation, D::RestorationConfirmed, State::AuthorizedMission);
    edge(State::AreaViolation, E::ObjectClassifiedAsDrone, State::DroneDetected);
    edge(State::AreaViolation, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Protocol 8: clarify time violation. A verified mission stop returns the
    // machine to surveillance.
    outcome(State::TimeViolation, D::TimedInterdiction, State::TimedInterdiction);
    outcome(State::TimeViolation, D::TolerateMission, State::TolerateAuthFailure);
    outcome(State::TimeViolation, D::RestorationConfirmed, State::Surveillance);
    edge(State::TimeViolation, E::ObjectClassifiedAsDrone, State::DroneDetected);
    edge(State::TimeViolation, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Tolerate ID Failure is equivalent to Valid ID for subsequent events.
    edge(State::TolerateIdFailure, E::AuthDbHit, State::AuthorizedMission);
    edge(State::TolerateIdFailure, E::AuthDbMiss, State::MissionNotAuthorized);
    edge(State::TolerateIdFailure, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Tolerate AUTH Failure is equivalent to Authorized Mission.
    edge(State::TolerateAuthFailure, E::AreaOk, State::TolerateAuthFailure);
    edge(State::TolerateAuthFailure, E::AreaViolated, State::AreaViolation);
    edge(State::TolerateAuthFailure, E::TimeOk, State::Compliant);
    edge(State::TolerateAuthFailure, E::TimeViolated, State::TimeViolation);
    edge(State::TolerateAuthFailure, E::MissionEndedOrOutOfRange, State::Surveillance);

    // Interdiction performed; the tracked object is gone.
    edge(State::ImmediateInterdiction, E::MissionEndedOrOutOfRange, State::Surveillance);
    edge(State::TimedInterdiction, E::MissionEndedOrOutOfRange, State::Surveillance);

    return t;
}

using TableKey = std::tuple<State, EventKind, std::optional<DecisionKind>>;

const std::map<TableKey, State>& table_index() {
    static const std::map<TableKey, State> index = [] {
        std::map<TableKey, State> m;
        for (const Edge& e : transition_table()) {
            m.emplace(TableKey{e.from, e.event.kind, e.event.outcome}, e.to);
        }
        return m;
    }();
    return index;
}

} // namespace

const std::vector<Edge>& transition_table() {
    static const std::vector<Edge> table = build_table();
    return table;
}

State step(State s, const CheckEvent& e) {
    const auto& index = table_index();
    auto it = index.find(TableKey{s, e.kind, e.outcome});
    if (it == index.end()) throw IllegalTransition(s, e);
    return it->second;
}

std::optional<int> protocol_trigger(State s) {
    switch (s) {
    case State::NoIdButPotentialOperator: return 1;
    case State::UnknownId: return 2;
    case State::IdKnownButNoAuth: return 3;
    case State::ExpiredIdUnauthorized: return 4;
    case State::ExpiredIdButAuthorized: return 5;
    case State::MissionNotAuthorized: return 6;
    case State::AreaViolation: return 7;
    case State::TimeViolation: return 8;
    default: return std::nullopt;
    }
}

const std::vector<State>& all_states() {
    static const std::vector<State> states = {
        State::Surveillance,        State::DroneDetected,
        State::IdReceived,          State::NoIdReceived,
        State::NoIdNoPotentialOperator, State::NoIdButPotentialOperator,
        State::FakeId,              State::IdNotInIdDb,
        State::UnknownId,           State::IdKnownButNoAuth,
        State::ExpiredId,           State::ExpiredIdUnauthorized,
        State::ExpiredIdButAuthorized, State::ValidId,
        State::MissionNotAuthorized, State::AuthorizedMission,
        State::AreaViolation,       State::TimeViolation,
        State::Compliant,           State::TolerateIdFailure,
        State::TolerateAuthFailure, State::ImmediateInterdiction,
        State::TimedInterdiction,
    };
    return states;
}

std::string export_edge_list() {
    std::ostringstream out;
    out << "state,event,next_state,color\n";
    for (const Edge& e : transition_table()) {
        out << to_string(e.from) << ',' << to_string(e.event) << ',' << to_string(e.to) << ','
            << to_string(color(e.to)) << '\n';
    }
    return out.str();
}

int ToleranceCounter::count(const DroneId& drone, int protocol) const {
    auto it = counts_.find({drone.value(), protocol});
    return it == counts_.end() ? 0 : it->second;
}

int ToleranceCounter::increment(const DroneId& drone, int protocol) {
    return ++counts_[{drone.value(), protocol}];
}

void ToleranceCounter::reset(const DroneId& drone) {
    for (auto it = counts_.begin(); it != counts_.end();) {
        if (it->first.first == drone.value()) it = counts_.erase(it);
        else ++it;
    }
}

Decision apply_tolerance(ToleranceCounter& counter, const DroneId& drone, int protocol,
                         int threshold, const Decision& produced, double interdiction_timeout_s) {
    if (!produced.is_tolerance()) return produced;
    const int count = counter.increment(drone, protocol);
    if (count > threshold) return Decision::timed(interdiction_timeout_s);
    return produced;
}

} // namespace cuasim::fsm
