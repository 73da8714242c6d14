#include <doctest.h>

#include <set>

#include "cuasim/bench.hpp"
#include "cuasim/netsim.hpp"
#include "cuasim/socket_transport.hpp"

using namespace cuasim;
using namespace cuasim::netsim;
using domain::TimestampMs;

namespace {

// Minimal scripted agent for exercising the bus primitives.
class ProbeAgent final : public Agent {
public:
    ProbeAgent(AgentId id) : id_(id) {}

    AgentId id() const override { return id_; }
    void on_message(const Envelope& e, Context& ctx) override {
        received.push_back({e, ctx.now()});
    }
    void send_now(Context& ctx, const AgentId& to, const std::string& type, int n) {
        Envelope e;
        e.recipient = to;
        e.msg_type = type;
        e.payload = {{"n", n}};
        ctx.send(std::move(e));
    }
    void on_start(Context& ctx) override {
        if (on_start_hook) on_start_hook(ctx);
    }

    std::function<void(Context&)> on_start_hook;
    std::vector<std::pair<Envelope, TimestampMs>> received;

private:
    AgentId id_;
};

bench::DroneTemplate make_template(const std::string& name) {
    bench::DroneTemplate t;
    t.name = name;
    return t;
}

bench::ScenarioConfig zero_delay_scenario() {
    bench::ScenarioConfig s;
    s.seed = 7;
    s.operator_timeout_ms = 2000;
    s.confirm_window_ms = 2000;
    s.rid_listen_ms = 100;
    s.recheck_period_ms = 100;
    s.confirm_recheck_ms = 50;
    s.drone_counts = {0}; // set by the caller
    return s;
}

} // namespace

TEST_CASE("bus loopback fidelity, FIFO and exact virtual delay") {
    DelayModel delays;
    delays.default_edge = {50, 50};
    InprocBus bus(delays, 1);
    ProbeAgent a(AgentId::cuas(0));
    ProbeAgent b(AgentId::oper(0));
    bus.add_agent(a);
    bus.add_agent(b);
    CHECK(bus.channel_open(a.id(), b.id()));
    CHECK_FALSE(bus.channel_open(a.id(), AgentId::oper(9)));

    a.on_start_hook = [&a, &b](Context& ctx) {
        a.send_now(ctx, b.id(), "PING", 1);
        a.send_now(ctx, b.id(), "PING", 2);
    };
    bus.run();

    REQUIRE_EQ(b.received.size(), 2);
    CHECK_EQ(b.received[0].first.payload.at("n"), 1); // send order preserved
    CHECK_EQ(b.received[1].first.payload.at("n"), 2);
    CHECK_EQ(b.received[0].first.msg_type, "PING");
    // Constant 50 ms edge delay: receive timestamp is send + 50 exactly.
    CHECK_EQ(b.received[0].second, b.received[0].first.sent_at + 50);
    CHECK_EQ(b.received[1].second, b.received[1].first.sent_at + 50);
    // Distinct ids per run.
    CHECK_NE(b.received[0].first.msg_id, b.received[1].first.msg_id);
}

TEST_CASE("per-pair FIFO holds under randomized delays") {
    DelayModel delays;
    delays.default_edge = {0, 40}; // jittered
    InprocBus bus(delays, 99);
    ProbeAgent a(AgentId::cuas(0));
    ProbeAgent b(AgentId::oper(0));
    ProbeAgent c(AgentId::cuas(1));
    ProbeAgent d(AgentId::oper(1));
    for (ProbeAgent* p : {&a, &b, &c, &d}) bus.add_agent(*p);

    a.on_start_hook = [&](Context& ctx) {
        for (int i = 0; i < 32; ++i) a.send_now(ctx, b.id(), "SEQ", i);
    };
    c.on_start_hook = [&](Context& ctx) {
        for (int i = 0; i < 32; ++i) c.send_now(ctx, d.id(), "NOISE", i);
    };
    bus.run();

    REQUIRE_EQ(b.received.size(), 32);
    for (int i = 0; i < 32; ++i) CHECK_EQ(b.received[i].first.payload.at("n"), i);
    REQUIRE_EQ(d.received.size(), 32);
    for (int i = 0; i < 32; ++i) CHECK_EQ(d.received[i].first.payload.at("n"), i);
}

TEST_CASE("one authority per bus") {
    InprocBus bus({}, 1);
    auto reg = std::make_shared<registry::Registry>();
    auto engine = std::make_shared<clarify::Engine>(reg, nullptr, clarify::EngineConfig{});
    AuthorityAgent auth1(engine), auth2(engine);
    bus.add_agent(auth1);
    CHECK_THROWS_AS(bus.add_agent(auth2), std::logic_error);
}

TEST_CASE("scenario smoke: green, local reds, and protocol mix reach their intents") {
    bench::ScenarioConfig s = zero_delay_scenario();
    bench::DroneTemplate green = make_template("green");

    bench::DroneTemplate fake = make_template("fake");
    fake.rid = "fake";
    fake.authorization = "none";
    fake.registered = false;
    fake.expected = "local/FakeId";

    bench::DroneTemplate dark = make_template("dark");
    dark.rid = "none";
    dark.registered = false;
    dark.authorization = "none";
    dark.expected = "local/NoIdNoPotentialOperator";

    bench::DroneTemplate p3 = make_template("p3");
    p3.id_db_miss = true;
    p3.expected = "p3/CASE1";

    bench::DroneTemplate p6 = make_template("p6");
    p6.authorization = "none";
    p6.risk = "high";
    p6.expected = "p6/CASE2";

    bench::DroneTemplate p7 = make_template("p7");
    p7.authorization = "other_area";
    p7.response = "I CANNOT RETURN TO AUTHORIZED AREA";
    p7.risk = "low";
    p7.expected = "p7/CASE3";

    bench::DroneTemplate p8 = make_template("p8");
    p8.authorization = "ends_soon";
    p8.response = "I STOPPED MISSION";
    p8.post_claim_ok = true;
    p8.green_loops = 3;
    p8.expected = "p8/CASE4";

    s.templates = {green, fake, dark, p3, p6, p7, p8};
    s.drone_counts = {static_cast<int>(s.templates.size())};
    s.timed_interdiction_timeout_s = 0.2; // keep the virtual tail short
    bench::validate_scenario(s);

    bench::RunResult run = bench::run_inproc(s, s.drone_counts[0]);
    for (const auto& mismatch : run.mismatches) {
        INFO(mismatch);
        CHECK(false);
    }
    CHECK(run.conforms());

    // Only protocol drones produce clarification samples.
    std::set<std::string> sampled;
    for (const auto& sample : run.samples) sampled.insert(sample.drone);
    CHECK_EQ(sampled.size(), 4); // p3, p6, p7, p8
    CHECK_EQ(run.outcomes.at("green-0000"), "green");

    // Interdictions reach the court: p6 CASE2 timed + the two local reds.
    std::size_t interdiction_records = 0;
    for (const auto& line : {run.audit_jsonl}) {
        std::istringstream stream(line);
        std::string row;
        while (std::getline(stream, row))
            if (!row.empty()) ++interdiction_records;
    }
    CHECK_GE(interdiction_records, 3);
}

TEST_CASE("virtual-clock determinism: same scenario and seed, identical transcript bytes") {
    bench::ScenarioConfig s = zero_delay_scenario();
    s.edge_latency_lo = 0;
    s.edge_latency_hi = 30; // jitter must still replay identically
    s.operator_think_lo = 100;
    s.operator_think_hi = 400;
    bench::DroneTemplate p7 = make_template("p7");
    p7.authorization = "other_area";
    p7.response = "I CANNOT RETURN TO AUTHORIZED AREA";
    p7.expected = "p7/CASE3";
    bench::DroneTemplate p2 = make_template("p2");
    p2.registered = false;
    p2.authorization = "none";
    p2.expected = "p2/CASE1";
    s.templates = {p7, p2};
    s.drone_counts = {10};
    s.timed_interdiction_timeout_s = 0.1;
    bench::validate_scenario(s);

    bench::RunResult one = bench::run_inproc(s, 10);
    bench::RunResult two = bench::run_inproc(s, 10);
    CHECK_EQ(one.transcript_jsonl, two.transcript_jsonl);
    CHECK_EQ(one.sessions_jsonl, two.sessions_jsonl);
    CHECK_EQ(one.audit_jsonl, two.audit_jsonl);

    bench::ScenarioConfig s2 = s;
    s2.seed = s.seed + 1;
    bench::RunResult three = bench::run_inproc(s2, 10);
    CHECK_NE(one.transcript_jsonl, three.transcript_jsonl); // the seed matters
}

TEST_CASE("non-blocking authority: one slow operator never delays the fast sessions") {
    // 50 area-violation drones; operator 7 thinks for 60 s, the rest for 1 s.
    // No latency, no processing contention: every fast clarification must
    // equal the single-session baseline exactly.
    auto build = [](int count, int slow_index) {
        auto reg = std::make_shared<registry::Registry>();
        reg->add_issuer_secret("k1", "fims-issuer-secret");
        std::vector<DroneScript> drones;
        std::map<int, std::map<std::string, OperatorScript>> operator_scripts;
        auto directory_map = std::make_shared<std::map<std::string, int>>();
        for (int i = 0; i < count; ++i) {
            const std::string name = "av-" + std::to_string(i);
            const domain::DroneId drone(name);
            std::array<std::uint8_t, 8> raw{};
            raw[7] = static_cast<std::uint8_t>(i);
            const domain::OperatorId op{raw};
            (*directory_map)[op.to_hex()] = i;
            reg->register_drone(registry::IdRecord{drone, op, 3'600'000, "k1", "", {}});
            const double lat = 0.001 + 0.0005 * i;
            reg->insert_authorization(registry::MissionAuthorization{
                "A-" + name, drone, op, domain::TimeWindow(-60'000, 600'000),
                domain::Zone({domain::GeoPoint(lat, 0.02), domain::GeoPoint(lat, 0.021),
                              domain::GeoPoint(lat + 0.0004, 0.021),
                              domain::GeoPoint(lat + 0.0004, 0.02)})});
            DroneScript script;
            script.drone = drone;
            script.position = domain::GeoPoint(lat, 0.001); // outside the authorized area
            script.operator_index = i;
            script.expected = "p7/CASE3";
            drones.push_back(script);
            OperatorScript op_script;
            op_script.response = clarify::OperatorResponse::CannotReturn;
            op_script.think_ms = i == slow_index ? 60'000 : 1'000;
            operator_scripts[i][clarify::msg::kReturnToArea] = op_script;
        }
        return std::tuple{reg, drones, operator_scripts, directory_map};
    };

    auto run = [&](int count, int slow_index) {
        auto [reg, drones, operator_scripts, directory_map] = build(count, slow_index);
        clarify::EngineConfig config;
        config.operator_timeout_ms = 120'000;
        auto engine = std::make_shared<clarify::Engine>(
            reg, nullptr, config, clarify::RepairPolicy{},
            [directory_map](const domain::OperatorId& op) -> std::optional<AgentId> {
                auto it = directory_map->find(op.to_hex());
                if (it == directory_map->end()) return std::nullopt;
                return AgentId::oper(it->second);
            });
        AuthorityAgent authority(engine);
        CourtAgent court;
        CuasConfig cuas_config;
        cuas_config.zone = domain::Zone({domain::GeoPoint(0, 0), domain::GeoPoint(0, 0.05),
                                         domain::GeoPoint(0.05, 0.05), domain::GeoPoint(0.05, 0)});
        cuas_config.rid_listen_ms = 100;
        CuasAgent cuas(0, cuas_config, reg, drones);
        std::vector<std::unique_ptr<OperatorAgent>> operators;
        for (int i = 0; i < count; ++i)
            operators.push_back(std::make_unique<OperatorAgent>(i, operator_scripts[i]));
        InprocBus bus({}, 5);
        bus.add_agent(authority);
        bus.add_agent(court);
        bus.add_agent(cuas);
        for (auto& op : operators) bus.add_agent(*op);
        bus.run();
        return cuas.samples();
    };

    const auto baseline = run(1, -1); // one fast session
    REQUIRE_EQ(baseline.size(), 1);
    const TimestampMs baseline_delta = baseline[0].delta_ms();

    const int slow_index = 7;
    const auto samples = run(50, slow_index);
    REQUIRE_EQ(samples.size(), 50);
    TimestampMs max_fast = 0;
    TimestampMs slow_delta = 0;
    for (const auto& sample : samples) {
        if (sample.drone == "av-" + std::to_string(slow_index)) slow_delta = sample.delta_ms();
        else max_fast = std::max(max_fast, sample.delta_ms());
    }
    CHECK_EQ(max_fast, baseline_delta); // unaffected by the slow neighbor
    CHECK_GE(slow_delta, 60'000);
}

TEST_CASE("anti-deadlock through the full stack: repeated tolerance ends in interdiction") {
    bench::ScenarioConfig s = zero_delay_scenario();
    s.tolerance_threshold = 2;
    s.timed_interdiction_timeout_s = 0.1;
    bench::DroneTemplate p7 = make_template("loop7");
    p7.authorization = "other_area";
    p7.response = "I CANNOT RETURN TO AUTHORIZED AREA";
    p7.risk = "low";
    p7.end_after_decision = false; // keep flying outside, keep getting clarified
    p7.green_loops = 10;
    p7.expected = "p7/CASE3";
    s.templates = {p7};
    s.drone_counts = {1};
    bench::validate_scenario(s);

    bench::RunResult run = bench::run_inproc(s, 1);
    CHECK(run.conforms());
    REQUIRE_EQ(run.samples.size(), 3); // tolerate, tolerate, then the override
    CHECK_EQ(run.samples[0].decision, domain::DecisionKind::TolerateMission);
    CHECK_EQ(run.samples[1].decision, domain::DecisionKind::TolerateMission);
    CHECK_EQ(run.samples[2].decision, domain::DecisionKind::TimedInterdiction);
}

TEST_CASE("implicit confirmation works through the netsim stack") {
    bench::ScenarioConfig s = zero_delay_scenario();
    s.confirmation = "implicit";
    s.confirm_window_ms = 1500;
    bench::DroneTemplate p1 = make_template("p1i");
    p1.rid = "none";
    p1.response = "I RESTORED ID TRANSMISSION";
    p1.post_claim_ok = true;
    p1.expected = "p1/CASE5";
    s.templates = {p1};
    s.drone_counts = {1};
    bench::validate_scenario(s);

    bench::RunResult run = bench::run_inproc(s, 1);
    for (const auto& mismatch : run.mismatches) {
        INFO(mismatch);
        CHECK(false);
    }
    REQUIRE_EQ(run.samples.size(), 1);
    CHECK_EQ(run.samples[0].case_label, "CASE5");

    // The invalidation flavor: restoration claimed but never observed.
    bench::ScenarioConfig s2 = s;
    s2.templates[0].post_claim_ok = false;
    s2.templates[0].risk = "high";
    s2.templates[0].expected = "p1/CASE6";
    s2.timed_interdiction_timeout_s = 0.1;
    bench::validate_scenario(s2);
    bench::RunResult run2 = bench::run_inproc(s2, 1);
    for (const auto& mismatch : run2.mismatches) {
        INFO(mismatch);
        CHECK(false);
    }
    REQUIRE_GE(run2.samples.size(), 1);
    CHECK_EQ(run2.samples.back().case_label, "CASE6");
}

TEST_CASE("cuas requires officials-level database access") {
    CuasConfig config;
    config.access_level = registry::AccessLevel::Public;
    auto reg = std::make_shared<registry::Registry>();
    CHECK_THROWS_AS(CuasAgent(0, config, reg, {}), std::invalid_argument);
}

TEST_CASE("socket and in-process transports agree on outcomes and case labels") {
    bench::ScenarioConfig s;
    s.seed = 11;
    s.transport = "inproc";
    s.operator_timeout_ms = 400;
    s.confirm_window_ms = 400;
    s.diagnosis_ms = 10;
    s.timed_interdiction_timeout_s = 0.05;
    s.rid_listen_ms = 40;
    s.recheck_period_ms = 40;
    s.confirm_recheck_ms = 20;
    s.operator_think_lo = 20;
    s.operator_think_hi = 40;

    bench::DroneTemplate p1 = make_template("p1");
    p1.rid = "none";
    p1.response = "I AM ALREADY TRANSMITTING MY ID";
    p1.risk = "low";
    p1.expected = "p1/CASE3";
    bench::DroneTemplate p2 = make_template("p2");
    p2.registered = false;
    p2.authorization = "none";
    p2.expected = "p2/CASE1";
    bench::DroneTemplate p3 = make_template("p3");
    p3.id_db_miss = true;
    p3.repair = true;
    p3.expected = "p3/CASE2";
    bench::DroneTemplate p6 = make_template("p6");
    p6.authorization = "valid";
    p6.auth_db_miss = true;
    p6.expected = "p6/CASE1";
    bench::DroneTemplate p7 = make_template("p7");
    p7.authorization = "other_area";
    p7.response = "I RETURNED TO AUTHORIZED AREA";
    p7.post_claim_ok = true;
    p7.expected = "p7/CASE4";
    bench::DroneTemplate green = make_template("green");

    s.templates = {p1, p2, p3, p6, p7, green};
    s.drone_counts = {6};
    bench::validate_scenario(s);

    bench::RunResult inproc = bench::run_inproc(s, 6);
    bench::RunResult socket = bench::run_socket(s, 6, 0);

    for (const auto& mismatch : inproc.mismatches) {
        INFO("inproc: ", mismatch);
        CHECK(false);
    }
    for (const auto& mismatch : socket.mismatches) {
        INFO("socket: ", mismatch);
        CHECK(false);
    }
    CHECK_EQ(inproc.outcomes, socket.outcomes);

    // Same sessions decided with the same case labels, transport aside.
    auto case_map = [](const bench::RunResult& r) {
        std::map<std::string, std::string> m;
        for (const auto& sample : r.samples)
            m[sample.drone] = std::to_string(sample.protocol) + "/" + sample.case_label;
        return m;
    };
    CHECK_EQ(case_map(inproc), case_map(socket));
}
