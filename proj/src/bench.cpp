#include "cuasim/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace cuasim::bench {

using clarify::ConfirmationMode;
using clarify::OperatorResponse;
using domain::DecisionKind;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Delay budget.

double delay_budget(double detect_s, double clarify_s, double timeout_s, double interdict_s,
                    bool tolerated) {
    if (detect_s < 0 || clarify_s < 0 || timeout_s < 0 || interdict_s < 0)
        throw std::invalid_argument("delay_budget: negative time component");
    if (tolerated) return 0.0; // no interdiction follows, the clarification cost vanishes
    const double denominator = detect_s + clarify_s + timeout_s + interdict_s;
    if (denominator == 0.0) throw DivisionDomainError();
    return clarify_s / denominator;
}

// ---------------------------------------------------------------------------
// Statistics.

namespace {

double median_of(const std::vector<std::int64_t>& sorted, std::size_t lo, std::size_t hi) {
    const std::size_t n = hi - lo;
    if (n == 0) return 0.0;
    if (n % 2 == 1) return static_cast<double>(sorted[lo + n / 2]);
    return (static_cast<double>(sorted[lo + n / 2 - 1]) + static_cast<double>(sorted[lo + n / 2])) /
           2.0;
}

std::string format_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

} // namespace

StatsSummary summarize(int protocol, int count, std::vector<std::int64_t> deltas) {
    StatsSummary s;
    s.protocol = protocol;
    s.count = count;
    s.n = deltas.size();
    if (deltas.empty()) return s;
    std::sort(deltas.begin(), deltas.end());
    double sum = 0;
    for (auto d : deltas) sum += static_cast<double>(d);
    s.mean = sum / static_cast<double>(deltas.size());
    s.min = static_cast<double>(deltas.front());
    s.max = static_cast<double>(deltas.back());
    const std::size_t n = deltas.size();
    s.median = median_of(deltas, 0, n);
    if (n == 1) {
        s.q1 = s.q3 = s.median;
        return s;
    }
    // Median-of-halves: the middle element is excluded when n is odd.
    s.q1 = median_of(deltas, 0, n / 2);
    s.q3 = median_of(deltas, n % 2 == 0 ? n / 2 : n / 2 + 1, n);
    return s;
}

std::string stats_csv(const std::vector<StatsSummary>& rows) {
    std::ostringstream out;
    out << "protocol,count,n,mean,min,q1,median,q3,max\n";
    for (const auto& r : rows) {
        out << r.protocol << ',' << r.count << ',' << r.n << ',' << format_fixed(r.mean, 3) << ','
            << format_fixed(r.min, 1) << ',' << format_fixed(r.q1, 1) << ','
            << format_fixed(r.median, 1) << ',' << format_fixed(r.q3, 1) << ','
            << format_fixed(r.max, 1) << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Scenario JSON.

namespace {

template <typename T> void read_if(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

void read_latency(const json& j, const char* key, TimestampMs& lo, TimestampMs& hi) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (v.is_array()) {
        lo = v.at(0).get<TimestampMs>();
        hi = v.at(1).get<TimestampMs>();
    } else {
        lo = hi = v.get<TimestampMs>();
    }
}

json latency_json(TimestampMs lo, TimestampMs hi) {
    if (lo == hi) return lo;
    return json::array({lo, hi});
}

} // namespace

ScenarioConfig scenario_from_json(const json& j) {
    ScenarioConfig s;
    read_if(j, "schema_version", s.schema_version);
    read_if(j, "name", s.name);
    read_if(j, "seed", s.seed);
    read_if(j, "clock", s.clock);
    read_if(j, "transport", s.transport);
    read_if(j, "port", s.port);
    read_if(j, "tolerance_threshold", s.tolerance_threshold);
    read_if(j, "confirmation", s.confirmation);
    read_if(j, "operator_timeout_ms", s.operator_timeout_ms);
    read_if(j, "confirm_window_ms", s.confirm_window_ms);
    read_if(j, "diagnosis_ms", s.diagnosis_ms);
    read_if(j, "timed_interdiction_timeout_s", s.timed_interdiction_timeout_s);
    read_if(j, "rid_listen_ms", s.rid_listen_ms);
    read_if(j, "recheck_period_ms", s.recheck_period_ms);
    read_if(j, "confirm_recheck_ms", s.confirm_recheck_ms);
    if (j.contains("delay_model")) {
        const json& d = j.at("delay_model");
        read_latency(d, "edge_latency_ms", s.edge_latency_lo, s.edge_latency_hi);
        read_if(d, "authority_processing_ms", s.authority_processing_ms);
        read_latency(d, "operator_think_ms", s.operator_think_lo, s.operator_think_hi);
    }
    read_if(j, "drone_counts", s.drone_counts);
    if (j.contains("drones")) {
        for (const json& t : j.at("drones")) {
            DroneTemplate d;
            read_if(t, "name", d.name);
            read_if(t, "rid", d.rid);
            read_if(t, "registered", d.registered);
            read_if(t, "expired", d.expired);
            read_if(t, "stale_expiry_fault", d.stale_expiry_fault);
            read_if(t, "authorization", d.authorization);
            read_if(t, "id_db_miss", d.id_db_miss);
            read_if(t, "auth_db_miss", d.auth_db_miss);
            read_if(t, "repair", d.repair);
            read_if(t, "phantom_repair", d.phantom_repair);
            read_if(t, "response", d.response);
            read_if(t, "post_claim_ok", d.post_claim_ok);
            read_if(t, "risk", d.risk);
            read_if(t, "end_after_decision", d.end_after_decision);
            read_if(t, "green_loops", d.green_loops);
            read_if(t, "expected", d.expected);
            s.templates.push_back(std::move(d));
        }
    }
    return s;
}

nlohmann::ordered_json scenario_to_json(const ScenarioConfig& s) {
    nlohmann::ordered_json j;
    j["schema_version"] = s.schema_version;
    j["name"] = s.name;
    j["seed"] = s.seed;
    j["clock"] = s.clock;
    j["transport"] = s.transport;
    if (s.port != 0) j["port"] = s.port;
    j["tolerance_threshold"] = s.tolerance_threshold;
    j["confirmation"] = s.confirmation;
    j["operator_timeout_ms"] = s.operator_timeout_ms;
    j["confirm_window_ms"] = s.confirm_window_ms;
    j["diagnosis_ms"] = s.diagnosis_ms;
    j["timed_interdiction_timeout_s"] = s.timed_interdiction_timeout_s;
    j["rid_listen_ms"] = s.rid_listen_ms;
    j["recheck_period_ms"] = s.recheck_period_ms;
    j["confirm_recheck_ms"] = s.confirm_recheck_ms;
    j["delay_model"] = {
        {"edge_latency_ms", latency_json(s.edge_latency_lo, s.edge_latency_hi)},
        {"authority_processing_ms", s.authority_processing_ms},
        {"operator_think_ms", latency_json(s.operator_think_lo, s.operator_think_hi)}};
    j["drone_counts"] = s.drone_counts;
    nlohmann::ordered_json drones = nlohmann::ordered_json::array();
    for (const auto& d : s.templates) {
        nlohmann::ordered_json t;
        t["name"] = d.name;
        t["rid"] = d.rid;
        t["registered"] = d.registered;
        t["expired"] = d.expired;
        t["stale_expiry_fault"] = d.stale_expiry_fault;
        t["authorization"] = d.authorization;
        t["id_db_miss"] = d.id_db_miss;
        t["auth_db_miss"] = d.auth_db_miss;
        t["repair"] = d.repair;
        t["phantom_repair"] = d.phantom_repair;
        t["response"] = d.response;
        t["post_claim_ok"] = d.post_claim_ok;
        t["risk"] = d.risk;
        t["end_after_decision"] = d.end_after_decision;
        t["green_loops"] = d.green_loops;
        t["expected"] = d.expected;
        drones.push_back(std::move(t));
    }
    j["drones"] = std::move(drones);
    return j;
}

ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioInvalid("cannot read scenario file: " + path);
    json j;
    in >> j;
    ScenarioConfig s = scenario_from_json(j);
    validate_scenario(s);
    return s;
}

// ---------------------------------------------------------------------------
// Intent prediction: what the scripted knobs of a template must produce.
// Doubles as the scenario validator and the post-run conformance oracle.

namespace {

std::optional<OperatorResponse> parse_response(const std::string& name) {
    if (name.empty() || name == "silent") return std::nullopt;
    for (OperatorResponse r :
         {OperatorResponse::NotFlying, OperatorResponse::AlreadyTransmitting,
          OperatorResponse::CannotRestore, OperatorResponse::RestoredId,
          OperatorResponse::AlreadyInAuthorizedArea, OperatorResponse::CannotReturn,
          OperatorResponse::ReturnedToArea, OperatorResponse::NotExceedingTime,
          OperatorResponse::CannotStop, OperatorResponse::StoppedMission}) {
        if (name == clarify::response_label(r)) return r;
    }
    throw ScenarioInvalid("unknown operator response: " + name);
}

std::string predict_outcome(const DroneTemplate& t) {
    auto claim_case = [&](const char* confirmed_case, const char* invalidated_case) {
        return t.post_claim_ok ? confirmed_case : invalidated_case;
    };

    if (t.rid == "fake") return "local/FakeId";
    if (t.rid == "none") {
        if (t.authorization == "none" || t.auth_db_miss) return "local/NoIdNoPotentialOperator";
        auto r = parse_response(t.response);
        if (!r) return "p1/CASE1";
        switch (*r) {
        case OperatorResponse::NotFlying: return "p1/CASE2";
        case OperatorResponse::AlreadyTransmitting: return "p1/CASE3";
        case OperatorResponse::CannotRestore: return "p1/CASE4";
        case OperatorResponse::RestoredId: return std::string("p1/") + claim_case("CASE5", "CASE6");
        default: throw ScenarioInvalid("response not legal for protocol 1: " + t.response);
        }
    }

    const bool id_visible = t.registered && !t.id_db_miss;
    const bool expired_reported = t.expired || t.stale_expiry_fault;
    const bool auth_here = t.authorization == "valid" && !t.auth_db_miss;

    if (!id_visible) {
        if (auth_here) { // missing ID in ID-DB, authorization present
            if (!t.registered)
                throw ScenarioInvalid("template " + t.name +
                                      ": ID-DB miss path needs a registered drone");
            if (t.phantom_repair) return "p3/CASE2-ESCALATED";
            return t.repair ? "p3/CASE2" : "p3/CASE1";
        }
        if (!t.registered) return "p2/CASE1";
        if (t.id_db_miss && t.auth_db_miss && t.authorization == "valid") return "p2/CASE3";
        return "p2/CASE2";
    }

    if (expired_reported) {
        if (auth_here) {
            if (t.phantom_repair) return "p5/CASE2-ESCALATED";
            if (t.stale_expiry_fault && t.repair) return "p5/CASE2";
            return "p5/CASE1";
        }
        const bool fault = t.stale_expiry_fault || t.auth_db_miss;
        if (fault && t.phantom_repair) return "p4/CASE3-ESCALATED";
        if (fault && t.repair) return "p4/CASE3";
        if (fault) return "p4/CASE2";
        return "p4/CASE1";
    }

    if (t.authorization == "none") return t.risk == "high" ? "p6/CASE2" : "p6/CASE3";
    if (t.auth_db_miss && t.authorization == "valid") return "p6/CASE1"; // row behind the fault
    if (t.auth_db_miss) return t.risk == "high" ? "p6/CASE2" : "p6/CASE3";

    if (t.authorization == "other_area") {
        auto r = parse_response(t.response);
        if (!r) return "p7/CASE1";
        switch (*r) {
        case OperatorResponse::AlreadyInAuthorizedArea: return "p7/CASE2";
        case OperatorResponse::CannotReturn: return "p7/CASE3";
        case OperatorResponse::ReturnedToArea:
            return std::string("p7/") + claim_case("CASE4", "CASE5");
        default: throw ScenarioInvalid("response not legal for protocol 7: " + t.response);
        }
    }
    if (t.authorization == "ends_soon") {
        auto r = parse_response(t.response);
        if (!r) return "p8/CASE1";
        switch (*r) {
        case OperatorResponse::NotExceedingTime: return "p8/CASE2";
        case OperatorResponse::CannotStop: return "p8/CASE3";
        case OperatorResponse::StoppedMission:
            return std::string("p8/") + claim_case("CASE4", "CASE5");
        default: throw ScenarioInvalid("response not legal for protocol 8: " + t.response);
        }
    }
    return "green";
}

int predicted_protocol(const std::string& outcome) {
    if (outcome.size() >= 2 && outcome[0] == 'p' && std::isdigit(static_cast<unsigned char>(outcome[1])))
        return outcome[1] - '0';
    return 0;
}

} // namespace

void validate_scenario(const ScenarioConfig& s) {
    if (s.schema_version != 1) throw ScenarioInvalid("unsupported schema_version");
    if (s.templates.empty()) throw ScenarioInvalid("scenario needs at least one drone template");
    if (s.drone_counts.empty()) throw ScenarioInvalid("scenario needs at least one drone count");
    for (int c : s.drone_counts)
        if (c <= 0) throw ScenarioInvalid("drone counts must be positive");
    if (s.clock != "virtual" && s.clock != "wall")
        throw ScenarioInvalid("clock must be virtual|wall");
    if (s.transport != "inproc" && s.transport != "socket")
        throw ScenarioInvalid("transport must be inproc|socket");
    if (s.transport == "inproc" && s.clock != "virtual")
        throw ScenarioInvalid("the in-process transport runs on the virtual clock");
    if (s.transport == "socket" && s.clock != "wall")
        throw ScenarioInvalid("the socket transport runs on the wall clock");
    if (s.confirmation != "explicit" && s.confirmation != "implicit")
        throw ScenarioInvalid("confirmation must be explicit|implicit");
    if (s.edge_latency_lo < 0 || s.edge_latency_hi < s.edge_latency_lo)
        throw ScenarioInvalid("edge latency range invalid");
    if (s.operator_think_lo < 0 || s.operator_think_hi < s.operator_think_lo)
        throw ScenarioInvalid("operator think range invalid");
    if (s.authority_processing_ms < 0) throw ScenarioInvalid("authority processing must be >= 0");
    if (s.timed_interdiction_timeout_s <= 0)
        throw ScenarioInvalid("timed interdiction timeout must be > 0");

    int p1_templates = 0;
    std::set<std::string> names;
    for (const auto& t : s.templates) {
        if (t.name.empty() || t.name.size() > 12)
            throw ScenarioInvalid("template names must be 1..12 characters");
        if (!names.insert(t.name).second)
            throw ScenarioInvalid("duplicate template name: " + t.name);
        if (t.rid != "none" && t.rid != "authentic" && t.rid != "fake")
            throw ScenarioInvalid("rid must be none|authentic|fake");
        if (t.authorization != "none" && t.authorization != "valid" &&
            t.authorization != "other_area" && t.authorization != "ends_soon")
            throw ScenarioInvalid("authorization must be none|valid|other_area|ends_soon");
        if (t.risk != "low" && t.risk != "high") throw ScenarioInvalid("risk must be low|high");
        if (t.green_loops < 1) throw ScenarioInvalid("green_loops must be >= 1");
        if ((t.id_db_miss || t.stale_expiry_fault) && !t.registered)
            throw ScenarioInvalid("template " + t.name + ": database faults need a stored row");
        if (t.auth_db_miss && t.authorization == "none")
            throw ScenarioInvalid("template " + t.name +
                                  ": auth_db_miss needs an authorization row");
        if (t.rid == "none" && t.authorization != "none" && t.authorization != "valid")
            throw ScenarioInvalid("template " + t.name +
                                  ": a missing-ID drone's potential operator needs a valid "
                                  "authorization");
        if (t.rid == "none" && t.authorization == "valid") ++p1_templates;

        const std::string predicted = predict_outcome(t);
        if (predicted != t.expected)
            throw ScenarioInvalid("template " + t.name + ": knobs produce " + predicted +
                                  " but expected declares " + t.expected);
    }
    // The potential-operator query returns the head of a shared list, so one
    // scripted missing-ID behavior per scenario keeps intents unambiguous.
    if (p1_templates > 1)
        throw ScenarioInvalid("at most one missing-ID (protocol 1) template per scenario");
}

// ---------------------------------------------------------------------------
// Materialization.

namespace {

domain::Zone square(double lat0, double lon0, double side) {
    return domain::Zone({domain::GeoPoint(lat0, lon0), domain::GeoPoint(lat0, lon0 + side),
                         domain::GeoPoint(lat0 + side, lon0 + side),
                         domain::GeoPoint(lat0 + side, lon0)});
}

domain::OperatorId operator_id_for(int index) {
    std::array<std::uint8_t, 8> raw{};
    raw[0] = 0xE0;
    raw[4] = static_cast<std::uint8_t>(index >> 24);
    raw[5] = static_cast<std::uint8_t>(index >> 16);
    raw[6] = static_cast<std::uint8_t>(index >> 8);
    raw[7] = static_cast<std::uint8_t>(index);
    return domain::OperatorId(raw);
}

std::string pad4(int v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", v);
    return buf;
}

} // namespace

MaterializedRun materialize(const ScenarioConfig& s, int drone_count, TimestampMs base_time) {
    MaterializedRun m;
    m.registry = std::make_shared<registry::Registry>();
    m.registry->add_issuer_secret("k1", "fims-issuer-secret");

    m.engine_config.tolerance_threshold = s.tolerance_threshold;
    m.engine_config.operator_timeout_ms = s.operator_timeout_ms;
    m.engine_config.confirm_window_ms = s.confirm_window_ms;
    m.engine_config.diagnosis_ms = s.diagnosis_ms;
    m.engine_config.timed_interdiction_timeout_s = s.timed_interdiction_timeout_s;
    m.engine_config.confirmation = s.confirmation == "implicit" ? ConfirmationMode::Implicit
                                                                : ConfirmationMode::Explicit;

    m.delays.default_edge = {s.edge_latency_lo, s.edge_latency_hi};
    m.delays.authority_processing_ms = s.authority_processing_ms;
    m.delays.operator_think = {s.operator_think_lo, s.operator_think_hi};

    m.cuas_config.zone = square(0.0, 0.0, 0.01);
    m.cuas_config.rid_listen_ms = s.rid_listen_ms;
    m.cuas_config.recheck_period_ms = s.recheck_period_ms;
    m.cuas_config.confirm_recheck_ms = s.confirm_recheck_ms;
    m.cuas_config.confirmation = m.engine_config.confirmation;

    m.risk_policy = [](const clarify::RiskContext& ctx) {
        return ctx.mission_criticality == "high" ? domain::RiskLevel::High : domain::RiskLevel::Low;
    };

    netsim::Rng think_rng(s.seed ^ 0x7468696e6bull);
    auto directory_map = std::make_shared<std::map<std::string, int>>();

    const TimestampMs window_start = base_time - 60'000;
    const TimestampMs window_end = base_time + 600'000;
    const TimestampMs valid_expiry = base_time + 3'600'000;

    registry::FaultInjection faults;

    for (int i = 0; i < drone_count; ++i) {
        const DroneTemplate& t = s.templates[static_cast<std::size_t>(i) % s.templates.size()];
        const std::string drone_name = t.name + "-" + pad4(i);
        const domain::DroneId drone(drone_name);
        const domain::OperatorId op = operator_id_for(i);
        (*directory_map)[op.to_hex()] = i;

        // A distinct grid cell per drone keeps positions and areas disjoint.
        const double cell_lat = 0.001 + 0.0005 * static_cast<double>((i / 16) % 16);
        const double cell_lon = 0.001 + 0.0005 * static_cast<double>(i % 16);
        const domain::GeoPoint position(cell_lat, cell_lon);

        if (t.registered) {
            m.registry->register_drone(registry::IdRecord{
                drone,
                op,
                t.expired ? base_time - 10'000 : valid_expiry,
                "k1",
                "operator record " + drone_name,
                {}});
        }

        if (t.authorization != "none") {
            domain::Zone area = square(cell_lat - 0.0002, cell_lon - 0.0002, 0.0004);
            if (t.authorization == "other_area")
                area = square(cell_lat - 0.0002, cell_lon + 0.001, 0.0004);
            TimestampMs start = window_start;
            TimestampMs end = window_end;
            if (t.authorization == "ends_soon")
                end = base_time + std::max<TimestampMs>(1, s.recheck_period_ms / 2);
            if (t.rid == "none") start -= 60'000; // potential operators sort first
            m.registry->insert_authorization(registry::MissionAuthorization{
                "A-" + drone_name, drone, op, domain::TimeWindow(start, end), area});
        }

        if (t.id_db_miss) faults.id_db_miss.insert(drone_name);
        if (t.auth_db_miss) faults.auth_db_miss.insert(drone_name);
        if (t.stale_expiry_fault) faults.stale_expiry.insert(drone_name);
        if (t.repair) m.repair.repairs.insert(drone_name);
        if (t.phantom_repair) m.repair.phantom_repairs.insert(drone_name);

        netsim::DroneScript script;
        script.drone = drone;
        script.rid = t.rid == "none"   ? netsim::DroneScript::Rid::None
                     : t.rid == "fake" ? netsim::DroneScript::Rid::Fake
                                       : netsim::DroneScript::Rid::Authentic;
        script.position = position;
        script.operator_index = i;
        script.risk.mission_criticality = t.risk;
        script.end_after_decision = t.end_after_decision;
        script.green_loops = t.green_loops;
        script.expected = t.expected;

        auto response = parse_response(t.response);
        script.restore_after_claim = t.post_claim_ok && response == OperatorResponse::RestoredId;
        script.returns_to_area = t.post_claim_ok && response == OperatorResponse::ReturnedToArea;
        script.stops_when_claimed = t.post_claim_ok && response == OperatorResponse::StoppedMission;

        m.expected[drone_name] = t.expected;
        m.drones.push_back(std::move(script));

        // Operator behavior: respond to the one request its protocol sends.
        const int protocol = predicted_protocol(t.expected);
        if (response && (protocol == 1 || protocol == 7 || protocol == 8)) {
            const char* request = protocol == 1   ? clarify::msg::kCheckRestoreId
                                  : protocol == 7 ? clarify::msg::kReturnToArea
                                                  : clarify::msg::kStopIfTimeExceeded;
            netsim::OperatorScript op_script;
            op_script.response = response;
            op_script.think_ms = m.delays.operator_think.sample(think_rng);
            m.operator_scripts[i][request] = op_script;
        }
    }

    m.registry->set_faults(faults);
    m.directory = [directory_map](const domain::OperatorId& op) -> std::optional<netsim::AgentId> {
        auto it = directory_map->find(op.to_hex());
        if (it == directory_map->end()) return std::nullopt;
        return netsim::AgentId::oper(it->second);
    };
    return m;
}

// ---------------------------------------------------------------------------
// In-process run.

RunResult run_inproc(const ScenarioConfig& s, int drone_count) {
    MaterializedRun m = materialize(s, drone_count);

    auto engine = std::make_shared<clarify::Engine>(m.registry, m.risk_policy, m.engine_config,
                                                    m.repair, m.directory);
    netsim::AuthorityAgent authority(engine);
    netsim::CourtAgent court;
    netsim::CuasAgent cuas(0, m.cuas_config, m.registry, m.drones);

    std::vector<std::unique_ptr<netsim::OperatorAgent>> operators;
    operators.reserve(static_cast<std::size_t>(drone_count));
    for (int i = 0; i < drone_count; ++i) {
        auto scripts_it = m.operator_scripts.find(i);
        operators.push_back(std::make_unique<netsim::OperatorAgent>(
            i, scripts_it == m.operator_scripts.end()
                   ? std::map<std::string, netsim::OperatorScript>{}
                   : scripts_it->second));
    }

    netsim::InprocBus bus(m.delays, s.seed);
    bus.add_agent(authority);
    bus.add_agent(court);
    bus.add_agent(cuas);
    for (auto& op : operators) bus.add_agent(*op);
    bus.run();

    RunResult result;
    result.samples = cuas.samples();
    result.outcomes = cuas.outcomes();
    result.expected = m.expected;
    result.duration_ms = bus.now();
    result.transcript_jsonl = netsim::transcript_to_jsonl(bus.transcript());

    std::ostringstream sessions;
    for (const auto& [sid, session] : engine->sessions())
        sessions << session.summary_json().dump() << '\n';
    result.sessions_jsonl = sessions.str();

    std::ostringstream audit;
    for (const auto& record : court.records()) audit << record.to_json().dump() << '\n';
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

// ---------------------------------------------------------------------------
// Sweep.

SweepResult run_sweep(const ScenarioConfig& s, const std::string& out_dir) {
    namespace fs = std::filesystem;
    SweepResult sweep;
    const bool write = !out_dir.empty();
    if (write) fs::create_directories(out_dir);

    std::map<std::pair<int, int>, std::vector<std::int64_t>> cells; // (protocol, count)

    if (write) {
        // Snapshot the seeded databases of the largest level for audit.
        MaterializedRun m = materialize(s, s.drone_counts.back());
        m.registry->dump_id_db((fs::path(out_dir) / "id_db.jsonl").string());
        m.registry->dump_auth_db((fs::path(out_dir) / "auth_db.jsonl").string());
    }

    for (int count : s.drone_counts) {
        RunResult run =
            s.transport == "socket" ? run_socket(s, count, s.port) : run_inproc(s, count);
        double sum = 0;
        for (const auto& sample : run.samples) {
            cells[{sample.protocol, count}].push_back(sample.delta_ms());
            sum += static_cast<double>(sample.delta_ms());
        }
        sweep.mean_by_count[count] =
            run.samples.empty() ? 0.0 : sum / static_cast<double>(run.samples.size());
        sweep.duration_by_count[count] = run.duration_ms;
        sweep.conforms_by_count[count] = run.conforms();

        if (write) {
            const std::string suffix = "_c" + std::to_string(count);
            std::ofstream(fs::path(out_dir) / ("transcript" + suffix + ".jsonl"))
                << run.transcript_jsonl;
            std::ofstream(fs::path(out_dir) / ("sessions" + suffix + ".jsonl"))
                << run.sessions_jsonl;
            std::ofstream(fs::path(out_dir) / ("audit" + suffix + ".jsonl")) << run.audit_jsonl;
            if (s.drone_counts.size() == 1) {
                std::ofstream(fs::path(out_dir) / "transcript.jsonl") << run.transcript_jsonl;
                std::ofstream(fs::path(out_dir) / "sessions.jsonl") << run.sessions_jsonl;
                std::ofstream(fs::path(out_dir) / "audit.jsonl") << run.audit_jsonl;
            }
        }
    }

    for (auto& [key, deltas] : cells)
        sweep.stats.push_back(summarize(key.first, key.second, std::move(deltas)));
    std::sort(sweep.stats.begin(), sweep.stats.end(),
              [](const StatsSummary& a, const StatsSummary& b) {
                  return std::tie(a.protocol, a.count) < std::tie(b.protocol, b.count);
              });
    sweep.csv = stats_csv(sweep.stats);
    if (write) std::ofstream(fs::path(out_dir) / "results.csv") << sweep.csv;
    return sweep;
}

// ---------------------------------------------------------------------------
// Replay.

std::size_t replay_transcript(const ScenarioConfig& s, const std::string& transcript_path) {
    std::ifstream in(transcript_path);
    if (!in) throw std::runtime_error("cannot read transcript: " + transcript_path);

    std::vector<std::pair<netsim::Envelope, TimestampMs>> inbound; // to the authority
    std::map<TimestampMs, std::vector<std::string>> reference;     // authority output groups
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto [envelope, delivered_at] = netsim::Envelope::from_transcript_line(line);
        if (envelope.recipient.role == netsim::Role::Authority)
            inbound.push_back({envelope, delivered_at});
        if (envelope.sender.role == netsim::Role::Authority)
            reference[envelope.sent_at].push_back(envelope.recipient.to_string() + '|' +
                                                  envelope.msg_type + '|' +
                                                  envelope.correlation_id + '|' +
                                                  envelope.payload.dump());
    }

    MaterializedRun m = materialize(s, s.drone_counts.front());
    clarify::Engine engine(m.registry, m.risk_policy, m.engine_config, m.repair, m.directory);

    std::vector<clarify::TimerRequest> timers;
    std::map<TimestampMs, std::vector<std::string>> replayed;

    std::size_t index = 0;
    auto absorb = [&](const clarify::DispatchResult& result, TimestampMs at) {
        for (const auto& e : result.out)
            replayed[at].push_back(e.recipient.to_string() + '|' + e.msg_type + '|' +
                                   e.correlation_id + '|' + e.payload.dump());
        for (const auto& t : result.timers) timers.push_back(t);
    };

    while (index < inbound.size() || !timers.empty()) {
        const TimestampMs next_in = index < inbound.size()
                                        ? inbound[index].second
                                        : std::numeric_limits<TimestampMs>::max();
        auto next_timer =
            std::min_element(timers.begin(), timers.end(),
                             [](const clarify::TimerRequest& a, const clarify::TimerRequest& b) {
                                 return a.due_at < b.due_at;
                             });
        const TimestampMs next_tm = next_timer == timers.end()
                                        ? std::numeric_limits<TimestampMs>::max()
                                        : next_timer->due_at;
        if (next_in <= next_tm) {
            absorb(engine.dispatch(inbound[index].first, next_in), next_in);
            ++index;
        } else {
            clarify::TimerRequest req = *next_timer;
            timers.erase(next_timer);
            absorb(engine.on_timer(req, next_tm), next_tm);
        }
    }

    // Per-timestamp multiset comparison: emission order within one virtual
    // instant is scheduler-dependent, content is not.
    std::size_t compared = 0;
    for (auto& [at, lines] : replayed) std::sort(lines.begin(), lines.end());
    for (auto& [at, lines] : reference) std::sort(lines.begin(), lines.end());
    if (replayed.size() != reference.size())
        throw std::runtime_error("replay diverged: different emission timestamps");
    for (auto rit = replayed.begin(), fit = reference.begin(); rit != replayed.end();
         ++rit, ++fit) {
        if (rit->first != fit->first)
            throw std::runtime_error("replay diverged at timestamp " + std::to_string(rit->first));
        if (rit->second != fit->second)
            throw std::runtime_error("replay diverged in content at timestamp " +
                                     std::to_string(rit->first));
        compared += rit->second.size();
    }
    return compared;
}

// ---------------------------------------------------------------------------
// Case conformance.

namespace {

struct Stimulus {
    int protocol;
    const char* label;
    const char* description;
    bool registered = true;
    bool genuine_expired = false;
    bool auth_row = false; // active window covering the run
    bool id_miss = false, auth_miss = false, stale = false, repair = false;
    const char* response = nullptr; // nullptr: silent / not applicable
    bool post_ok = true;
    const char* risk = "low";
    DecisionKind expect = DecisionKind::RestorationConfirmed;
    bool stop = false, complete = false, nondestructive = false;
};

const Stimulus kStimuli[] = {
    // Protocol 1: clarify missing ID transmission.
    {1, "CASE1", "no response", true, false, true, false, false, false, false, nullptr, true, "low",
     DecisionKind::ImmediateInterdiction, false, false, false},
    {1, "CASE2", "operator not flying", true, false, true, false, false, false, false,
     "I AM NOT FLYING", true, "low", DecisionKind::ImmediateInterdiction, false, false, false},
    {1, "CASE3", "already transmitting, low risk", true, false, true, false, false, false, false,
     "I AM ALREADY TRANSMITTING MY ID", true, "low", DecisionKind::TolerateIdFailure, false, true,
     false},
    {1, "CASE3", "already transmitting, high risk", true, false, true, false, false, false, false,
     "I AM ALREADY TRANSMITTING MY ID", true, "high", DecisionKind::TimedInterdiction, true, false,
     false},
    {1, "CASE4", "cannot restore, low risk", true, false, true, false, false, false, false,
     "I AM NOT ABLE TO RESTORE ID", true, "low", DecisionKind::TolerateIdFailure, false, true,
     false},
    {1, "CASE4", "cannot restore, high risk", true, false, true, false, false, false, false,
     "I AM NOT ABLE TO RESTORE ID", true, "high", DecisionKind::TimedInterdiction, true, false,
     false},
    {1, "CASE5", "restored and confirmed", true, false, true, false, false, false, false,
     "I RESTORED ID TRANSMISSION", true, "low", DecisionKind::RestorationConfirmed, false, false,
     false},
    {1, "CASE6", "unconfirmed restoration, low risk", true, false, true, false, false, false,
     false, "I RESTORED ID TRANSMISSION", false, "low", DecisionKind::TolerateIdFailure, false,
     true, false},
    {1, "CASE6", "unconfirmed restoration, high risk", true, false, true, false, false, false,
     false, "I RESTORED ID TRANSMISSION", false, "high", DecisionKind::TimedInterdiction, true,
     false, false},

    // Protocol 2: clarify unknown ID.
    {2, "CASE1", "no technical issue: security break", false, false, false, false, false, false,
     false, nullptr, true, "low", DecisionKind::ImmediateInterdiction, false, false, true},
    {2, "CASE2", "registered, ID-DB retrieval issue, unauthorized", true, false, false, true,
     false, false, false, nullptr, true, "low", DecisionKind::TimedInterdiction, true, false,
     false},
    {2, "CASE3", "issues with both databases", true, false, true, true, true, false, false,
     nullptr, true, "low", DecisionKind::TolerateAuthFailure, false, false, false},

    // Protocol 3: clarify missing ID in ID-DB.
    {3, "CASE1", "unresolved ID-DB issue", true, false, true, true, false, false, false, nullptr,
     true, "low", DecisionKind::TolerateIdFailure, false, false, false},
    {3, "CASE2", "resolved ID-DB issue, re-query confirms", true, false, true, true, false, false,
     true, nullptr, true, "low", DecisionKind::RestorationConfirmed, false, false, false},

    // Protocol 4: clarify unauthorized and expired ID.
    {4, "CASE1", "no technical issue", true, true, false, false, false, false, false, nullptr,
     true, "low", DecisionKind::TimedInterdiction, true, false, false},
    {4, "CASE2", "database fault, unresolved", true, false, false, false, false, true, false,
     nullptr, true, "low", DecisionKind::TolerateAuthFailure, false, false, false},
    {4, "CASE3", "both databases restored, re-query confirms", true, false, true, false, true,
     true, true, nullptr, true, "low", DecisionKind::RestorationConfirmed, false, false, false},

    // Protocol 5: clarify authorized but expired ID.
    {5, "CASE1", "unresolved ID-DB issue", true, false, true, false, false, true, false, nullptr,
     true, "low", DecisionKind::TolerateIdFailure, false, false, false},
    {5, "CASE2", "ID-DB updated, valid entry confirmed", true, false, true, false, false, true,
     true, nullptr, true, "low", DecisionKind::RestorationConfirmed, false, false, false},

    // Protocol 6: clarify missing authorization.
    {6, "CASE1", "technical issue with AUTH-DB, resolved", true, false, true, false, true, false,
     false, nullptr, true, "low", DecisionKind::IssueResolved, false, false, false},
    {6, "CASE2", "no issue, high risk", true, false, false, false, false, false, false, nullptr,
     true, "high", DecisionKind::TimedInterdiction, true, false, false},
    {6, "CASE3", "no issue, low risk", true, false, false, false, false, false, false, nullptr,
     true, "low", DecisionKind::TolerateMission, false, true, false},

    // Protocol 7: clarify area violation.
    {7, "CASE1", "no response", true, false, true, false, false, false, false, nullptr, true,
     "low", DecisionKind::TimedInterdiction, true, false, false},
    {7, "CASE2", "claims already in area, low risk", true, false, true, false, false, false,
     false, "I AM ALREADY FLYING IN AUTHORIZED AREA", true, "low", DecisionKind::TolerateMission,
     false, true, false},
    {7, "CASE2", "claims already in area, high risk", true, false, true, false, false, false,
     false, "I AM ALREADY FLYING IN AUTHORIZED AREA", true, "high",
     DecisionKind::TimedInterdiction, true, false, false},
    {7, "CASE3", "cannot return, low risk", true, false, true, false, false, false, false,
     "I CANNOT RETURN TO AUTHORIZED AREA", true, "low", DecisionKind::TolerateMission, false, true,
     false},
    {7, "CASE3", "cannot return, high risk", true, false, true, false, false, false, false,
     "I CANNOT RETURN TO AUTHORIZED AREA", true, "high", DecisionKind::TimedInterdiction, true,
     false, false},
    {7, "CASE4", "returned, verified", true, false, true, false, false, false, false,
     "I RETURNED TO AUTHORIZED AREA", true, "low", DecisionKind::RestorationConfirmed, false,
     false, false},
    {7, "CASE5", "unconfirmed return", true, false, true, false, false, false, false,
     "I RETURNED TO AUTHORIZED AREA", false, "low", DecisionKind::TimedInterdiction, true, false,
     false},

    // Protocol 8: clarify time violation.
    {8, "CASE1", "no response", true, false, true, false, false, false, false, nullptr, true,
     "low", DecisionKind::TimedInterdiction, true, false, false},
    {8, "CASE2", "claims within time, low risk", true, false, true, false, false, false, false,
     "I AM NOT EXCEEDING AUTHORIZED FLIGHT TIME", true, "low", DecisionKind::TolerateMission,
     false, true, false},
    {8, "CASE2", "claims within time, high risk", true, false, true, false, false, false, false,
     "I AM NOT EXCEEDING AUTHORIZED FLIGHT TIME", true, "high", DecisionKind::TimedInterdiction,
     true, false, false},
    {8, "CASE3", "cannot stop, low risk", true, false, true, false, false, false, false,
     "I CANNOT STOP MISSION", true, "low", DecisionKind::TolerateMission, false, true, false},
    {8, "CASE3", "cannot stop, high risk", true, false, true, false, false, false, false,
     "I CANNOT STOP MISSION", true, "high", DecisionKind::TimedInterdiction, true, false, false},
    {8, "CASE4", "stopped, verified", true, false, true, false, false, false, false,
     "I STOPPED MISSION", true, "low", DecisionKind::RestorationConfirmed, false, false, false},
    {8, "CASE5", "unconfirmed stop", true, false, true, false, false, false, false,
     "I STOPPED MISSION", false, "low", DecisionKind::TimedInterdiction, true, false, false},
};

} // namespace

std::vector<CaseCheck> run_case_conformance() {
    std::vector<CaseCheck> checks;
    for (const Stimulus& stim : kStimuli) {
        auto reg = std::make_shared<registry::Registry>();
        reg->add_issuer_secret("k1", "fims-issuer-secret");
        const domain::DroneId drone("case-drone");
        const domain::OperatorId op = operator_id_for(1);

        if (stim.registered) {
            reg->register_drone(registry::IdRecord{
                drone, op, stim.genuine_expired ? TimestampMs{-10'000} : TimestampMs{3'600'000},
                "k1", "case operator", {}});
        }
        if (stim.auth_row) {
            reg->insert_authorization(registry::MissionAuthorization{
                "A-case", drone, op, domain::TimeWindow(-60'000, 600'000), square(0, 0, 0.01)});
        }
        registry::FaultInjection faults;
        if (stim.id_miss) faults.id_db_miss.insert(drone.value());
        if (stim.auth_miss) faults.auth_db_miss.insert(drone.value());
        if (stim.stale) faults.stale_expiry.insert(drone.value());
        reg->set_faults(faults);

        clarify::RepairPolicy repair;
        if (stim.repair) repair.repairs.insert(drone.value());

        const bool high = std::string(stim.risk) == "high";
        clarify::EngineConfig config;
        config.operator_timeout_ms = 1000;
        config.confirm_window_ms = 1000;
        config.diagnosis_ms = 0;
        clarify::SyncRunner runner(
            reg,
            [high](const clarify::RiskContext&) {
                return high ? domain::RiskLevel::High : domain::RiskLevel::Low;
            },
            config, repair);

        clarify::ScriptedResponder responder;
        if (stim.response != nullptr) responder.response = clarify::response_from_label(stim.response);
        responder.post_claim_ok = stim.post_ok;

        clarify::RiskContext risk_ctx;
        risk_ctx.mission_criticality = high ? "high" : "low";
        const clarify::ProtocolRun run = runner.run(stim.protocol, drone, responder, risk_ctx);

        CaseCheck check;
        check.protocol = stim.protocol;
        check.case_label = stim.label;
        check.stimulus = stim.description;
        check.expected_decision = domain::to_string(stim.expect);
        check.expect_stop_order = stim.stop;
        check.expect_complete_order = stim.complete;
        check.expect_nondestructive = stim.nondestructive;
        check.actual_decision = domain::to_string(run.decision.kind);
        check.actual_case = run.case_label;
        check.actual_stop_order = run.stop_order_sent;
        check.actual_complete_order = run.complete_order_sent;
        check.actual_nondestructive = run.decision.nondestructive;
        check.pass = check.actual_case == check.case_label &&
                     check.actual_decision == check.expected_decision &&
                     check.actual_stop_order == check.expect_stop_order &&
                     check.actual_complete_order == check.expect_complete_order &&
                     check.actual_nondestructive == check.expect_nondestructive;
        checks.push_back(std::move(check));
    }
    return checks;
}

std::size_t distinct_cases(const std::vector<CaseCheck>& checks) {
    std::set<std::pair<int, std::string>> cases;
    for (const auto& c : checks) cases.insert({c.protocol, c.case_label});
    return cases.size();
}

} // namespace cuasim::bench
