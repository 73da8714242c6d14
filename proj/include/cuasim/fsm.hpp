#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cuasim/domain.hpp"

// The CUAS-side post-detection state machine. A tracked drone steps through
// identity and authorization checks; passing every check walks the green
// path, a failed check lands in an orange state that triggers one of the
// eight clarification protocols, and uncooperative drones end in a red
// interdiction state. The transition table is immutable shared data; one
// Machine instance tracks one drone.

namespace cuasim::fsm {

using domain::Decision;
using domain::DecisionKind;
using domain::DroneId;

enum class State {
    Surveillance,
    DroneDetected,
    IdReceived,
    NoIdReceived,
    NoIdNoPotentialOperator,
    NoIdButPotentialOperator,
    FakeId,
    IdNotInIdDb,
    UnknownId,
    IdKnownButNoAuth,
    ExpiredId,
    ExpiredIdUnauthorized,
    ExpiredIdButAuthorized,
    ValidId,
    MissionNotAuthorized,
    AuthorizedMission,
    AreaViolation,
    TimeViolation,
    Compliant,
    TolerateIdFailure,
    TolerateAuthFailure,
    ImmediateInterdiction,
    TimedInterdiction,
};

enum class Color { Green, Orange, Red };

enum class EventKind {
    ObjectClassifiedAsDrone,
    RidReceived,
    RidTimeout,
    AuthenticityOk,
    AuthenticityFail,
    IdDbHit,
    IdDbMiss,
    IdValid,
    IdExpired,
    AuthDbHit,
    AuthDbMiss,
    PotentialOperatorFound,
    NoPotentialOperator,
    AreaOk,
    AreaViolated,
    TimeOk,
    TimeViolated,
    ProtocolOutcome,
    MissionEndedOrOutOfRange,
};

/// A check result or protocol outcome driving one transition. Only
/// ProtocolOutcome carries data that affects the successor state.
struct CheckEvent {
    EventKind kind;
    std::optional<DecisionKind> outcome; // set iff kind == ProtocolOutcome

    static CheckEvent of(EventKind kind);
    static CheckEvent protocol_outcome(DecisionKind decision);
};

class IllegalTransition : public std::logic_error {
public:
    IllegalTransition(State s, const CheckEvent& e);
};

const char* to_string(State s);
const char* to_string(EventKind k);
std::string to_string(const CheckEvent& e);
Color color(State s);
const char* to_string(Color c);

struct Edge {
    State from;
    CheckEvent event;
    State to;
};

/// The full static transition table, in documentation order.
const std::vector<Edge>& transition_table();

/// Pure successor function. Throws IllegalTransition when (s, e) is not in
/// the table; an illegal pair signals a harness scripting bug.
State step(State s, const CheckEvent& e);

/// Which clarification protocol an orange state triggers (1..8), if any.
std::optional<int> protocol_trigger(State s);

/// All states, in declaration order.
const std::vector<State>& all_states();

/// Edge list as `state,event,next_state,color` lines (color of the successor),
/// for documentation and the reachability test oracle.
std::string export_edge_list();

/// Per-(drone, protocol) count of tolerance decisions, backing the
/// anti-deadlock rule: a drone that keeps needing the same clarification
/// stops being tolerated.
class ToleranceCounter {
public:
    int count(const DroneId& drone, int protocol) const;
    int increment(const DroneId& drone, int protocol);
    void reset(const DroneId& drone);

private:
    std::map<std::pair<std::string, int>, int> counts_;
};

/// Applies the anti-deadlock policy to a freshly produced tolerance decision:
/// the counter is bumped, and once it exceeds the threshold the decision is
/// overridden to a timed interdiction. Non-tolerance decisions pass through
/// untouched.
Decision apply_tolerance(ToleranceCounter& counter, const DroneId& drone, int protocol,
                         int threshold, const Decision& produced, double interdiction_timeout_s);

/// One tracked drone. Events are applied in arrival order.
class Machine {
public:
    explicit Machine(State initial = State::Surveillance) : state_(initial) {}

    State state() const { return state_; }
    Color current_color() const { return color(state_); }
    State apply(const CheckEvent& e) { return state_ = step(state_, e); }

private:
    State state_;
};

} // namespace cuasim::fsm
