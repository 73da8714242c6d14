#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cuasim/netsim.hpp"

// Scenario definition, the clarification-time experiment, summary statistics,
// the delay-budget calculator and the case-conformance oracle behind the
// `cases` subcommand.

namespace cuasim::bench {

using domain::TimestampMs;

// ---------------------------------------------------------------------------
// Delay budget: the share of the end-to-end counter-drone response spent on
// clarification. Zero when the drone is tolerated (nothing to counter).

class DivisionDomainError : public std::runtime_error {
public:
    DivisionDomainError() : std::runtime_error("delay budget denominator is zero") {}
};

double delay_budget(double detect_s, double clarify_s, double timeout_s, double interdict_s,
                    bool tolerated);

// ---------------------------------------------------------------------------
// Statistics. Quartiles use the median-of-halves convention: the median of
// the lower/upper half of the sorted samples, excluding the middle element
// when the sample count is odd.

struct StatsSummary {
    int protocol = 0;
    int count = 0; // drone-count level of the sweep
    std::size_t n = 0;
    double mean = 0, min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

StatsSummary summarize(int protocol, int count, std::vector<std::int64_t> deltas);
std::string stats_csv(const std::vector<StatsSummary>& rows);

// ---------------------------------------------------------------------------
// Scenario schema (version 1). One JSON document drives registry seeding,
// fault injection, drone behavior scripts, operator scripts, delays and the
// sweep levels. Template drones are cloned round-robin up to each count.

struct DroneTemplate {
    std::string name;
    std::string rid = "authentic"; // none | authentic | fake
    bool registered = true;
    bool expired = false; // registration genuinely lapsed
    bool stale_expiry_fault = false;
    std::string authorization = "valid"; // none | valid | other_area | ends_soon
    bool id_db_miss = false;
    bool auth_db_miss = false;
    bool repair = false;         // authority fixes the fault mid-session
    bool phantom_repair = false; // authority claims a fix that does not hold
    std::string response;        // operator response phrase; "silent"; "" for n/a
    bool post_claim_ok = true;
    std::string risk = "low"; // low | high
    bool end_after_decision = true;
    int green_loops = 1;
    std::string expected = "green"; // green | p<N>/CASE<k> | local/<state>
};

struct ScenarioConfig {
    int schema_version = 1;
    std::string name = "scenario";
    std::uint64_t seed = 1;
    std::string clock = "virtual";    // virtual | wall
    std::string transport = "inproc"; // inproc | socket
    int port = 0;                     // socket transport; 0 picks a free port

    int tolerance_threshold = 2;
    std::string confirmation = "explicit";
    TimestampMs operator_timeout_ms = 10'000;
    TimestampMs confirm_window_ms = 10'000;
    TimestampMs diagnosis_ms = 0;
    double timed_interdiction_timeout_s = 30.0;

    TimestampMs rid_listen_ms = 500;
    TimestampMs recheck_period_ms = 1000;
    TimestampMs confirm_recheck_ms = 500;

    TimestampMs edge_latency_lo = 0;
    TimestampMs edge_latency_hi = 0;
    TimestampMs authority_processing_ms = 0;
    TimestampMs operator_think_lo = 0;
    TimestampMs operator_think_hi = 0;

    std::vector<int> drone_counts{1};
    std::vector<DroneTemplate> templates;
};

class ScenarioInvalid : public std::runtime_error {
public:
    explicit ScenarioInvalid(const std::string& what) : std::runtime_error(what) {}
};

ScenarioConfig scenario_from_json(const nlohmann::json& j);
nlohmann::ordered_json scenario_to_json(const ScenarioConfig& s);
ScenarioConfig load_scenario(const std::string& path);

/// Throws ScenarioInvalid naming the first violated constraint. Also checks
/// that every template's knobs produce its declared expected outcome.
void validate_scenario(const ScenarioConfig& s);

/// Everything one run at one drone count needs, fully materialized: seeded
/// registry rows, fault sets, per-drone scripts, operator scripts, delays.
struct MaterializedRun {
    std::shared_ptr<registry::Registry> registry;
    clarify::EngineConfig engine_config;
    clarify::RepairPolicy repair;
    clarify::RiskPolicy risk_policy;
    clarify::OperatorDirectory directory;
    netsim::DelayModel delays;
    netsim::CuasConfig cuas_config;
    std::vector<netsim::DroneScript> drones;
    std::map<int, std::map<std::string, netsim::OperatorScript>> operator_scripts;
    std::map<std::string, std::string> expected; // drone -> expected outcome
};

/// base_time anchors registry windows and expiries: 0 for the virtual clock,
/// the wall clock at run start for the socket transport.
MaterializedRun materialize(const ScenarioConfig& s, int drone_count, TimestampMs base_time = 0);

struct RunResult {
    std::vector<netsim::ClarificationRecord> samples;
    std::map<std::string, std::string> outcomes; // drone -> actual outcome
    std::map<std::string, std::string> expected;
    std::string transcript_jsonl;
    std::string sessions_jsonl;
    std::string audit_jsonl;
    TimestampMs duration_ms = 0; // time of quiescence (virtual or wall span)
    std::vector<std::string> mismatches;

    bool conforms() const { return mismatches.empty(); }
};

RunResult run_inproc(const ScenarioConfig& s, int drone_count);

/// Same scenario over the socket transport (wall clock, loopback TCP).
/// Defined in the socket transport translation unit.
RunResult run_socket(const ScenarioConfig& s, int drone_count, int port);

struct SweepResult {
    std::vector<StatsSummary> stats; // per (protocol, count)
    std::map<int, double> mean_by_count;
    std::map<int, TimestampMs> duration_by_count;
    std::map<int, bool> conforms_by_count;
    std::string csv;
};

/// Runs every drone count, writes results.csv plus per-count transcript,
/// session and audit files under out_dir (empty out_dir writes nothing).
SweepResult run_sweep(const ScenarioConfig& s, const std::string& out_dir);

/// Replays a transcript through a fresh authority engine and checks that
/// every authority-emitted envelope is reproduced. Returns the number of
/// envelopes compared; throws on the first divergence.
std::size_t replay_transcript(const ScenarioConfig& s, const std::string& transcript_path);

// ---------------------------------------------------------------------------
// Case-conformance oracle: the expected outcome of every protocol case,
// enumerated over every legal stimulus, risk level and fault configuration.

struct CaseCheck {
    int protocol = 0;
    std::string case_label;
    std::string stimulus;
    std::string expected_decision;
    bool expect_stop_order = false;
    bool expect_complete_order = false;
    bool expect_nondestructive = false;
    std::string actual_decision;
    std::string actual_case;
    bool actual_stop_order = false;
    bool actual_complete_order = false;
    bool actual_nondestructive = false;
    bool pass = false;
};

/// Runs the full stimulus grid against the engine. 36 stimuli covering the
/// 29 distinct protocol cases.
std::vector<CaseCheck> run_case_conformance();

/// Distinct (protocol, case) pairs in a check set.
std::size_t distinct_cases(const std::vector<CaseCheck>& checks);

} // namespace cuasim::bench
