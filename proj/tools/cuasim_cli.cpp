#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "cuasim/bench.hpp"
#include "cuasim/fsm.hpp"
#include "cuasim/socket_transport.hpp"

// Command-line front end: scenario runs, transcript replay, transition-table
// export, the protocol case checker and the delay-budget calculator.

namespace {

using namespace cuasim;

int cmd_run(const std::string& scenario_path, const std::string& out_dir,
            const std::string& transport, const std::string& clock, std::uint64_t seed,
            bool seed_set, int port) {
    bench::ScenarioConfig s = bench::load_scenario(scenario_path);
    if (!transport.empty()) {
        s.transport = transport;
        s.clock = transport == "socket" ? "wall" : "virtual";
    }
    if (!clock.empty()) s.clock = clock;
    if (seed_set) s.seed = seed;
    if (port != 0) s.port = port;
    bench::validate_scenario(s);

    std::printf("scenario %s: %zu template(s), counts:", s.name.c_str(), s.templates.size());
    for (int c : s.drone_counts) std::printf(" %d", c);
    std::printf(", transport %s, seed %llu\n", s.transport.c_str(),
                static_cast<unsigned long long>(s.seed));

    bench::SweepResult sweep = bench::run_sweep(s, out_dir);

    bool all_ok = true;
    for (int count : s.drone_counts) {
        const bool ok = sweep.conforms_by_count[count];
        all_ok = all_ok && ok;
        std::printf("  count %4d: mean clarification %.1f ms, duration %lld ms, %s\n", count,
                    sweep.mean_by_count[count],
                    static_cast<long long>(sweep.duration_by_count[count]),
                    ok ? "all drones on script" : "OUTCOME MISMATCH");
    }
    if (!out_dir.empty()) std::printf("artifacts written under %s\n", out_dir.c_str());
    std::fputs(sweep.csv.c_str(), stdout);
    return all_ok ? 0 : 1;
}

int cmd_replay(const std::string& scenario_path, const std::string& transcript_path) {
    bench::ScenarioConfig s = bench::load_scenario(scenario_path);
    try {
        const std::size_t compared = bench::replay_transcript(s, transcript_path);
        std::printf("replay ok: %zu authority emissions reproduced\n", compared);
        return 0;
    } catch (const std::exception& e) {
        std::printf("replay failed: %s\n", e.what());
        return 1;
    }
}

int cmd_fsm_export(const std::string& out_path) {
    const std::string edges = fsm::export_edge_list();
    if (out_path.empty()) {
        std::fputs(edges.c_str(), stdout);
    } else {
        std::ofstream out(out_path);
        if (!out) {
            std::fprintf(stderr, "cannot write %s\n", out_path.c_str());
            return 1;
        }
        out << edges;
        std::printf("wrote %zu transition edges to %s\n", fsm::transition_table().size(),
                    out_path.c_str());
    }
    return 0;
}

int cmd_cases() {
    const auto checks = bench::run_case_conformance();

    // One verdict per (protocol, case); a case passes when every stimulus
    // that lands in it passed.
    std::map<std::pair<int, std::string>, bool> verdicts;
    std::map<std::pair<int, std::string>, std::string> stimuli;
    for (const auto& c : checks) {
        auto key = std::make_pair(c.protocol, c.case_label);
        auto it = verdicts.find(key);
        verdicts[key] = (it == verdicts.end() ? true : it->second) && c.pass;
        if (!stimuli.count(key)) stimuli[key] = c.stimulus;
    }

    std::size_t failures = 0;
    for (const auto& [key, ok] : verdicts) {
        std::printf("[%s] protocol %d %s: %s\n", ok ? "PASS" : "FAIL", key.first,
                    key.second.c_str(), stimuli[key].c_str());
        if (!ok) ++failures;
    }
    std::printf("%zu/%zu protocol cases verified, %zu stimuli\n", verdicts.size() - failures,
                verdicts.size(), checks.size());
    return failures == 0 ? 0 : 1;
}

int cmd_budget(double detect, double clarify, double timeout, double interdict, bool tolerated) {
    try {
        const double share = bench::delay_budget(detect, clarify, timeout, interdict, tolerated);
        std::printf("clarification share of total response delay: %.4f (%.1f%%)\n", share,
                    share * 100.0);
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"counter-UAS / UTM clarification protocol simulator"};
    app.require_subcommand(1);

    std::string scenario_path, out_dir, transport, clock, transcript_path, export_path;
    std::uint64_t seed = 0;
    int port = 0;

    auto* run = app.add_subcommand("run", "run a scenario sweep and write results");
    run->add_option("scenario-file", scenario_path, "scenario JSON file");
    run->add_option("--scenario", scenario_path, "scenario JSON file");
    run->add_option("--out", out_dir, "output directory for results.csv and transcripts");
    run->add_option("--transport", transport, "inproc|socket")
        ->check(CLI::IsMember({"inproc", "socket"}));
    run->add_option("--clock", clock, "virtual|wall")->check(CLI::IsMember({"virtual", "wall"}));
    auto* seed_opt = run->add_option("--seed", seed, "random seed override");
    run->add_option("--port", port, "authority port for the socket transport");

    auto* replay = app.add_subcommand("replay", "re-drive a transcript through the authority");
    replay->add_option("transcript", transcript_path, "transcript.jsonl from a previous run")
        ->required();
    replay->add_option("--scenario", scenario_path, "scenario the transcript was produced from")
        ->required();

    auto* fsm_export =
        app.add_subcommand("fsm-export", "print the post-detection transition table");
    fsm_export->add_option("--out", export_path, "write the edge list to a file");

    app.add_subcommand("cases", "verify the protocol case outcomes against the engine");

    double detect = 0, clarify = 0, budget_timeout = 0, interdict = 0;
    bool tolerated = false;
    auto* budget = app.add_subcommand("budget", "clarification share of the response delay");
    budget->add_option("--detect", detect, "detection+classification seconds")->required();
    budget->add_option("--clarify", clarify, "clarification seconds")->required();
    budget->add_option("--timeout", budget_timeout, "interdiction grace timeout seconds");
    budget->add_option("--interdict", interdict, "interdiction seconds");
    budget->add_flag("--tolerated", tolerated, "the drone was tolerated, no interdiction");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            if (scenario_path.empty()) {
                std::fprintf(stderr, "run: a scenario file is required\n");
                return 106;
            }
            return cmd_run(scenario_path, out_dir, transport, clock, seed, seed_opt->count() > 0,
                           port);
        }
        if (replay->parsed()) return cmd_replay(scenario_path, transcript_path);
        if (fsm_export->parsed()) return cmd_fsm_export(export_path);
        if (app.got_subcommand("cases")) return cmd_cases();
        if (budget->parsed())
            return cmd_budget(detect, clarify, budget_timeout, interdict, tolerated);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
