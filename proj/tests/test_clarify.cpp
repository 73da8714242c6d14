#include <doctest.h>

#include <random>
#include <set>

#include "cuasim/bench.hpp"
#include "cuasim/clarify.hpp"

using namespace cuasim;
using namespace cuasim::clarify;
using domain::DecisionKind;
using domain::DroneId;
using domain::RiskLevel;

namespace {

domain::Zone square01() {
    return domain::Zone({domain::GeoPoint(0, 0), domain::GeoPoint(0, 0.01),
                         domain::GeoPoint(0.01, 0.01), domain::GeoPoint(0.01, 0)});
}

domain::OperatorId op_id() { return domain::OperatorId::from_hex("e000000000000001"); }

struct Fixture {
    std::shared_ptr<registry::Registry> reg = std::make_shared<registry::Registry>();
    DroneId drone{"t-drone"};

    Fixture() { reg->add_issuer_secret("k1", "fims-issuer-secret"); }

    void registered(domain::TimestampMs expiry = 3'600'000) {
        reg->register_drone(registry::IdRecord{drone, op_id(), expiry, "k1", "pii", {}});
    }
    void authorized() {
        reg->insert_authorization(registry::MissionAuthorization{
            "A-1", drone, op_id(), domain::TimeWindow(-60'000, 600'000), square01()});
    }
    void faults(bool id_miss, bool auth_miss, bool stale) {
        registry::FaultInjection f;
        if (id_miss) f.id_db_miss.insert(drone.value());
        if (auth_miss) f.auth_db_miss.insert(drone.value());
        if (stale) f.stale_expiry.insert(drone.value());
        reg->set_faults(f);
    }

    SyncRunner runner(RiskLevel risk = RiskLevel::Low, RepairPolicy repair = {},
                      ConfirmationMode mode = ConfirmationMode::Explicit) {
        EngineConfig config;
        config.operator_timeout_ms = 1000;
        config.confirm_window_ms = 1000;
        config.diagnosis_ms = 0;
        config.confirmation = mode;
        return SyncRunner(
            reg, [risk](const RiskContext&) { return risk; }, config, std::move(repair));
    }
};

} // namespace

TEST_CASE("case conformance: every stimulus row matches the outcome tables") {
    auto checks = bench::run_case_conformance();
    CHECK_EQ(checks.size(), 36);
    for (const auto& c : checks) {
        INFO("p", c.protocol, " ", c.case_label, " (", c.stimulus, "): expected ",
             c.expected_decision, " got ", c.actual_decision, " as ", c.actual_case);
        CHECK(c.pass);
    }
    CHECK_EQ(bench::distinct_cases(checks), 29);
}

TEST_CASE("risk flip changes the decision but never the case label") {
    struct Cell {
        int protocol;
        const char* response;
        DecisionKind low;
    };
    const Cell cells[] = {
        {1, "I AM ALREADY TRANSMITTING MY ID", DecisionKind::TolerateIdFailure},
        {1, "I AM NOT ABLE TO RESTORE ID", DecisionKind::TolerateIdFailure},
        {7, "I AM ALREADY FLYING IN AUTHORIZED AREA", DecisionKind::TolerateMission},
        {7, "I CANNOT RETURN TO AUTHORIZED AREA", DecisionKind::TolerateMission},
        {8, "I AM NOT EXCEEDING AUTHORIZED FLIGHT TIME", DecisionKind::TolerateMission},
        {8, "I CANNOT STOP MISSION", DecisionKind::TolerateMission},
    };
    for (const auto& cell : cells) {
        std::string low_case, high_case;
        for (RiskLevel risk : {RiskLevel::Low, RiskLevel::High}) {
            Fixture f;
            f.registered();
            f.authorized();
            auto runner = f.runner(risk);
            ScriptedResponder responder;
            responder.response = response_from_label(cell.response);
            auto run = runner.run(cell.protocol, f.drone, responder);
            if (risk == RiskLevel::Low) {
                low_case = run.case_label;
                CHECK_EQ(run.decision.kind, cell.low);
                CHECK(run.complete_order_sent);
                CHECK_FALSE(run.stop_order_sent);
            } else {
                high_case = run.case_label;
                CHECK_EQ(run.decision.kind, DecisionKind::TimedInterdiction);
                CHECK(run.stop_order_sent);
                CHECK_FALSE(run.complete_order_sent);
            }
        }
        CHECK_EQ(low_case, high_case);
    }
}

TEST_CASE("timed interdiction always pairs with a stop-mission order") {
    for (const auto& check : bench::run_case_conformance()) {
        if (check.actual_decision == "TimedInterdiction") {
            INFO("p", check.protocol, " ", check.case_label);
            CHECK(check.actual_stop_order);
        }
        if (check.actual_decision == "ImmediateInterdiction") CHECK_FALSE(check.actual_stop_order);
    }
}

TEST_CASE("interdiction decisions are logged to the court") {
    Fixture f;
    f.registered(-10'000); // expired, no authorization: protocol 4 CASE1
    auto runner = f.runner(RiskLevel::Low);
    auto run = run_protocol4(runner, f.drone);
    CHECK_EQ(run.decision.kind, DecisionKind::TimedInterdiction);
    CHECK(run.interdiction_logged);

    Fixture f2;
    f2.registered();
    f2.authorized();
    f2.faults(true, false, false);
    auto runner2 = f2.runner(RiskLevel::Low);
    auto run2 = run_protocol3(runner2, f2.drone); // tolerate: nothing for the court
    CHECK_EQ(run2.decision.kind, DecisionKind::TolerateIdFailure);
    CHECK_FALSE(run2.interdiction_logged);
}

TEST_CASE("protocol 3 fault toggles: unresolved vs resolved vs phantom") {
    SUBCASE("fault present, unresolved: tolerate") {
        Fixture f;
        f.registered();
        f.authorized();
        f.faults(true, false, false);
        auto runner = f.runner();
        auto run = run_protocol3(runner, f.drone);
        CHECK_EQ(run.case_label, "CASE1");
        CHECK_EQ(run.decision.kind, DecisionKind::TolerateIdFailure);
    }
    SUBCASE("fault repaired: clearing id_db_miss flips CASE1 into CASE2") {
        Fixture f;
        f.registered();
        f.authorized();
        f.faults(true, false, false);
        RepairPolicy repair;
        repair.repairs.insert(f.drone.value());
        auto runner = f.runner(RiskLevel::Low, repair);
        auto run = run_protocol3(runner, f.drone);
        CHECK_EQ(run.case_label, "CASE2");
        CHECK_EQ(run.decision.kind, DecisionKind::RestorationConfirmed);
        CHECK(f.reg->faults().id_db_miss.empty()); // the scripted repair cleared it
    }
    SUBCASE("claimed repair that does not hold escalates") {
        Fixture f;
        f.registered();
        f.authorized();
        f.faults(true, false, false);
        RepairPolicy repair;
        repair.phantom_repairs.insert(f.drone.value());
        auto runner = f.runner(RiskLevel::Low, repair);
        auto run = run_protocol3(runner, f.drone);
        CHECK_EQ(run.case_label, "CASE2-ESCALATED");
        CHECK_EQ(run.decision.kind, DecisionKind::TimedInterdiction);
        CHECK(run.stop_order_sent);
    }
}

TEST_CASE("protocol 5 fault toggles and escalation to protocol 4 semantics") {
    SUBCASE("stale expiry unresolved: tolerate expired id") {
        Fixture f;
        f.registered();
        f.authorized();
        f.faults(false, false, true);
        auto runner = f.runner();
        auto run = run_protocol5(runner, f.drone);
        CHECK_EQ(run.case_label, "CASE1");
        CHECK_EQ(run.decision.kind, DecisionKind::TolerateIdFailure);
    }
    SUBCASE("stale expiry cleared: valid entry confirmed") {
        Fixture f;
        f.registered();
        f.authorized();
        f.faults(false, false, true);
        RepairPolicy repair;
        repair.repairs.insert(f.drone.value());
        auto runner = f.runner(RiskLevel::Low, repair);
        auto run = run_protocol5(runner, f.drone);
        CHECK_EQ(run.case_label, "CASE2");
        CHECK_EQ(run.decision.kind, DecisionKind::RestorationConfirmed);
    }
    SUBCASE("phantom repair: re-query still expired, protocol 4 fault branch") {
        Fixture f;
        f.registered();
        f.authorized();
        f.faults(false, false, true);
        RepairPolicy repair;
        repair.phantom_repairs.insert(f.drone.value());
        auto runner = f.runner(RiskLevel::Low, repair);
        auto run = run_protocol5(runner, f.drone);
        CHECK_EQ(run.case_label, "CASE2-ESCALATED");
        CHECK_EQ(run.decision.kind, DecisionKind::TolerateAuthFailure);
    }
}

TEST_CASE("protocol 6 fault toggle flips resolved vs risk branch") {
    SUBCASE("auth fault present: resolved regardless of risk") {
        Fixture f;
        f.registered();
        f.authorized();
        f.faults(false, true, false);
        auto runner = f.runner(RiskLevel::High);
        auto run = run_protocol6(runner, f.drone);
        CHECK_EQ(run.case_label, "CASE1");
        CHECK_EQ(run.decision.kind, DecisionKind::IssueResolved);
        CHECK(f.reg->faults().auth_db_miss.empty());
    }
    SUBCASE("no fault: risk decides the case") {
        for (RiskLevel risk : {RiskLevel::Low, RiskLevel::High}) {
            Fixture f;
            f.registered();
            auto runner = f.runner(risk);
            RiskContext ctx;
            ctx.mission_criticality = risk == RiskLevel::High ? "high" : "low";
            auto run = run_protocol6(runner, f.drone, ctx);
            if (risk == RiskLevel::High) {
                CHECK_EQ(run.case_label, "CASE2");
                CHECK_EQ(run.decision.kind, DecisionKind::TimedInterdiction);
            } else {
                CHECK_EQ(run.case_label, "CASE3");
                CHECK_EQ(run.decision.kind, DecisionKind::TolerateMission);
            }
        }
    }
}

TEST_CASE("protocol 2 diagnosis distinguishes the three failure shapes") {
    SUBCASE("unregistered: security break with forensics hint") {
        Fixture f; // nothing registered
        auto runner = f.runner();
        auto run = run_protocol2(runner, f.drone);
        CHECK_EQ(run.case_label, "CASE1");
        CHECK_EQ(run.decision.kind, DecisionKind::ImmediateInterdiction);
        CHECK(run.decision.nondestructive);
    }
    SUBCASE("registered behind a retrieval fault, genuinely unauthorized") {
        Fixture f;
        f.registered();
        f.faults(true, false, false);
        auto runner = f.runner();
        auto run = run_protocol2(runner, f.drone);
        CHECK_EQ(run.case_label, "CASE2");
        CHECK_EQ(run.decision.kind, DecisionKind::TimedInterdiction);
        CHECK(run.stop_order_sent);
    }
    SUBCASE("both databases faulty") {
        Fixture f;
        f.registered();
        f.authorized();
        f.faults(true, true, false);
        auto runner = f.runner();
        auto run = run_protocol2(runner, f.drone);
        CHECK_EQ(run.case_label, "CASE3");
        CHECK_EQ(run.decision.kind, DecisionKind::TolerateAuthFailure);
    }
}

TEST_CASE("per-protocol wire labels for the same decision kinds") {
    auto find_label = [](const ProtocolRun& run, const char* label) {
        for (const auto& e : run.outbound)
            if (e.msg_type == label) return true;
        return false;
    };

    Fixture f2; // protocol 2 immediate interdiction label
    auto runner2 = f2.runner();
    auto run2 = run_protocol2(runner2, f2.drone);
    CHECK(find_label(run2, msg::kImmediateInterdictionAuth));

    Fixture f4;
    f4.registered(-10'000); // genuinely expired
    auto runner4 = f4.runner();
    auto run4 = run_protocol4(runner4, f4.drone);
    CHECK(find_label(run4, msg::kTimedInterdictionAuth));

    Fixture f5;
    f5.registered();
    f5.authorized();
    f5.faults(false, false, true);
    auto runner5 = f5.runner();
    auto run5 = run_protocol5(runner5, f5.drone);
    CHECK(find_label(run5, msg::kTolerateExpiredId));

    Fixture f1;
    f1.registered();
    f1.authorized();
    auto runner1 = f1.runner();
    auto run1 = run_protocol1(runner1, f1.drone, {}); // silent: CASE1
    CHECK(find_label(run1, msg::kInterdictImmediately));
}

TEST_CASE("illegal response across protocols is surfaced") {
    Fixture f;
    f.registered();
    f.authorized();
    auto runner = f.runner();
    ScriptedResponder responder;
    responder.response = OperatorResponse::StoppedMission; // protocol 8 phrase
    CHECK_THROWS_AS(runner.run(7, f.drone, responder), IllegalResponse);
}

TEST_CASE("engine error envelopes: unknown correlation and duplicate open") {
    Fixture f;
    f.registered();
    f.authorized();
    EngineConfig config;
    Engine engine(
        f.reg, [](const RiskContext&) { return RiskLevel::Low; }, config);

    Envelope stale;
    stale.correlation_id = "never-opened";
    stale.sender = netsim::AgentId::oper(0);
    stale.recipient = netsim::AgentId::authority();
    stale.msg_type = response_label(OperatorResponse::NotFlying);
    auto result = engine.dispatch(stale, 5);
    REQUIRE_EQ(result.out.size(), 1);
    CHECK_EQ(result.out[0].msg_type, msg::kError);
    CHECK_EQ(result.out[0].payload.at("error"), "UnknownCorrelation");

    Envelope open =
        build_opener(6, f.drone, netsim::AgentId::cuas(0), "s-1", 10, {}, *f.reg, nullptr);
    engine.dispatch(open, 10);
    Envelope open2 = open;
    open2.correlation_id = "s-2"; // second open for the same drone+protocol
    auto dup = engine.dispatch(open2, 11);
    REQUIRE_EQ(dup.out.size(), 1);
    CHECK_EQ(dup.out[0].payload.at("error"), "DuplicateOpen");
}

TEST_CASE("malformed envelopes are rejected with an error reply") {
    Fixture f;
    Engine engine(f.reg, {}, {});
    Envelope junk;
    junk.correlation_id = "x";
    junk.sender = netsim::AgentId::cuas(0);
    junk.recipient = netsim::AgentId::authority();
    junk.msg_type = "WELL THIS IS UNEXPECTED";
    auto result = engine.dispatch(junk, 1);
    REQUIRE_EQ(result.out.size(), 1);
    CHECK_EQ(result.out[0].payload.at("error"), "Malformed");
}

TEST_CASE("implicit confirmation: silence confirms, a re-sent opener invalidates") {
    SUBCASE("restored and silent: CASE5") {
        Fixture f;
        f.registered();
        f.authorized();
        auto runner = f.runner(RiskLevel::Low, {}, ConfirmationMode::Implicit);
        ScriptedResponder responder;
        responder.response = OperatorResponse::RestoredId;
        responder.post_claim_ok = true;
        auto run = run_protocol1(runner, f.drone, responder);
        CHECK_EQ(run.case_label, "CASE5");
        CHECK_EQ(run.decision.kind, DecisionKind::RestorationConfirmed);
    }
    SUBCASE("not restored, opener re-sent: CASE6") {
        Fixture f;
        f.registered();
        f.authorized();
        auto runner = f.runner(RiskLevel::High, {}, ConfirmationMode::Implicit);
        ScriptedResponder responder;
        responder.response = OperatorResponse::RestoredId;
        responder.post_claim_ok = false;
        auto run = run_protocol1(runner, f.drone, responder);
        CHECK_EQ(run.case_label, "CASE6");
        CHECK_EQ(run.decision.kind, DecisionKind::TimedInterdiction);
    }
}

TEST_CASE("session bookkeeping invariants") {
    Fixture f;
    f.registered();
    f.authorized();
    auto runner = f.runner();
    ScriptedResponder responder;
    responder.response = OperatorResponse::AlreadyTransmitting;
    responder.think_ms = 100;
    auto run = runner.run(1, f.drone, responder);

    const ProtocolSession* s = runner.engine().find_session(run.session_id);
    REQUIRE(s != nullptr);
    CHECK(s->decided_at.has_value());
    CHECK(s->outcome.has_value());
    CHECK_GE(*s->decided_at, s->opened_at);
    for (const auto& e : s->transcript) CHECK_EQ(e.correlation_id, s->session_id);
    // Opener, operator request, response, COMPLETE MISSION, verdict.
    CHECK_GE(s->transcript.size(), 5);
}

TEST_CASE("sessions terminate under randomized behavior (mini soak)") {
    std::mt19937_64 rng(42);
    const char* responses1[] = {nullptr, "I AM NOT FLYING", "I AM ALREADY TRANSMITTING MY ID",
                                "I AM NOT ABLE TO RESTORE ID", "I RESTORED ID TRANSMISSION"};
    const char* responses7[] = {nullptr, "I AM ALREADY FLYING IN AUTHORIZED AREA",
                                "I CANNOT RETURN TO AUTHORIZED AREA",
                                "I RETURNED TO AUTHORIZED AREA"};
    const char* responses8[] = {nullptr, "I AM NOT EXCEEDING AUTHORIZED FLIGHT TIME",
                                "I CANNOT STOP MISSION", "I STOPPED MISSION"};
    for (int i = 0; i < 2000; ++i) {
        const int protocol = 1 + static_cast<int>(rng() % 8);
        Fixture f;
        const bool registered = protocol == 2 ? rng() % 2 == 0 : true;
        if (registered) f.registered(rng() % 4 != 0 ? 3'600'000 : -10'000);
        if (rng() % 2 == 0 || protocol == 1) f.authorized();
        // A hidden authorization cannot yield a potential operator, so no
        // auth fault on protocol 1 runs.
        f.faults(registered && rng() % 2 == 0, protocol != 1 && rng() % 2 == 0,
                 registered && rng() % 2 == 0);
        RepairPolicy repair;
        const auto repair_mode = rng() % 3;
        if (repair_mode == 0) repair.repairs.insert(f.drone.value());
        if (repair_mode == 1) repair.phantom_repairs.insert(f.drone.value());
        auto runner = f.runner(rng() % 2 == 0 ? RiskLevel::High : RiskLevel::Low, repair);

        ScriptedResponder responder;
        const char* pick = nullptr;
        if (protocol == 1) pick = responses1[rng() % 5];
        if (protocol == 7) pick = responses7[rng() % 4];
        if (protocol == 8) pick = responses8[rng() % 4];
        if (pick != nullptr) responder.response = response_from_label(pick);
        responder.post_claim_ok = rng() % 2 == 0;
        responder.think_ms = static_cast<domain::TimestampMs>(rng() % 500);

        auto run = runner.run(protocol, f.drone, responder);
        CHECK_FALSE(run.case_label.empty());
        CHECK_GE(run.decided_at, run.opened_at);
    }
}

TEST_CASE("tolerance threshold escalates repeated clarifications of one drone") {
    Fixture f;
    f.registered();
    f.authorized();
    f.faults(true, false, false); // protocol 3, unresolved
    EngineConfig config;
    config.tolerance_threshold = 2;
    config.diagnosis_ms = 0;
    SyncRunner runner(
        f.reg, [](const RiskContext&) { return RiskLevel::Low; }, config);

    auto first = runner.run(3, f.drone, {});
    auto second = runner.run(3, f.drone, {});
    auto third = runner.run(3, f.drone, {});
    CHECK_EQ(first.decision.kind, DecisionKind::TolerateIdFailure);
    CHECK_EQ(second.decision.kind, DecisionKind::TolerateIdFailure);
    CHECK_EQ(third.decision.kind, DecisionKind::TimedInterdiction);
    CHECK(third.stop_order_sent);        // the override still orders the mission stop
    CHECK_EQ(third.case_label, "CASE1"); // the case is unchanged, only the decision
}

TEST_CASE("cancelled sessions record no outcome") {
    Fixture f;
    f.registered();
    f.authorized();
    Engine engine(f.reg, {}, {});
    Envelope open =
        build_opener(6, f.drone, netsim::AgentId::cuas(0), "s-cancel", 100, {}, *f.reg, nullptr);
    engine.dispatch(open, 100);
    engine.cancel_session("s-cancel", 150);
    const ProtocolSession* s = engine.find_session("s-cancel");
    REQUIRE(s);
    CHECK(s->cancelled);
    CHECK_FALSE(s->outcome.has_value());
    CHECK_FALSE(s->decided_at.has_value());
    CHECK_EQ(*s->cancelled_at, 150);
    // A late timer for the cancelled session is ignored.
    auto result = engine.on_timer({"s-cancel", TimerKind::DiagnosisDue, 160, 1}, 160);
    CHECK(result.out.empty());
}
