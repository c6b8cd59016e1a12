#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>

#include "refinery/orchestrator.hpp"
#include "refinery/readability.hpp"
#include "test_support.hpp"

using namespace refinery;
namespace ts = testsupport;

namespace {

struct Rig {
    ScriptedBackend backend;
    Agents agents{backend, ts::prompt_library()};
    MathProblem problem = ts::sample_problem(); // grade_level = FK(kRefText)
    Topic topic = ts::sample_topic();
    StrategyConfig config{Strategy::Centralized, 3, 1.0};
};

void push_pass_sweep(Rig& rig) {
    rig.backend.push_response(agent_tag::kValidatorSolvability, ts::pass_verdict());
    rig.backend.push_response(agent_tag::kValidatorRealism, ts::pass_verdict());
    rig.backend.push_response(agent_tag::kValidatorAuthenticity, ts::pass_verdict());
}

} // namespace

TEST_CASE("centralized: immediate pass keeps the zero-shot text") {
    Rig rig;
    rig.backend.push_response(agent_tag::kConversion, ts::problem_payload(ts::kRefText));
    push_pass_sweep(rig);

    const StrategyOutcome outcome = run(rig.problem, rig.topic, rig.config, rig.agents);
    CHECK(outcome.iterations_used == 0);
    CHECK(outcome.stopped_early);
    CHECK(outcome.trace.final_status == FinalStatus::PassedAll);
    CHECK(outcome.trace.final_text == ts::kRefText);
    REQUIRE(outcome.trace.iterations.size() == 1);
    CHECK(outcome.trace.iterations[0].verdicts.size() == 4);
    CHECK(outcome.trace.iterations[0].revisions.empty());
    CHECK(outcome.trace.llm_call_count == 4); // conversion + 3 LLM validators
    CHECK(rig.backend.call_tags() ==
          std::vector<std::string>{"conversion", "validator.solvability",
                                   "validator.realism", "validator.authenticity"});
}

TEST_CASE("centralized: one realism failure costs exactly one refinement") {
    Rig rig;
    rig.backend.push_response(agent_tag::kConversion, ts::problem_payload(ts::kRefText));
    rig.backend.push_response(agent_tag::kValidatorSolvability, ts::pass_verdict());
    rig.backend.push_response(agent_tag::kValidatorRealism,
                              ts::fail_verdict("7 in unrealistically small"));
    rig.backend.push_response(agent_tag::kValidatorAuthenticity, ts::pass_verdict());
    rig.backend.push_response(agent_tag::kRefineAggregate,
                              ts::problem_payload(ts::kSameGradeText));
    push_pass_sweep(rig);

    const StrategyOutcome outcome = run(rig.problem, rig.topic, rig.config, rig.agents);
    CHECK(outcome.iterations_used == 1);
    CHECK(outcome.trace.final_status == FinalStatus::PassedAll);
    CHECK(outcome.trace.final_text == ts::kSameGradeText);
    REQUIRE(outcome.trace.iterations.size() == 2);

    const IterationRecord& first = outcome.trace.iterations[0];
    REQUIRE(first.revisions.size() == 1);
    CHECK(first.revisions[0].first == "aggregate");
    CHECK(first.revisions[0].second == ts::kSameGradeText);

    // the refiner saw only the failing criterion's feedback
    const auto requests = rig.backend.requests();
    const auto tags = rig.backend.call_tags();
    int refine_calls = 0;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        if (tags[i] != "refine.aggregate") continue;
        ++refine_calls;
        const std::string& prompt = requests[i].messages[0].content;
        CHECK(prompt.find("[realism] 7 in unrealistically small") != std::string::npos);
        CHECK(prompt.find("[solvability]") == std::string::npos);
    }
    CHECK(refine_calls == 1);
}

TEST_CASE("centralized: aggregate orders multiple failures by priority, readability included") {
    Rig rig;
    // zero-shot text fails readability (reference is kRefText's grade)
    rig.backend.push_response(agent_tag::kConversion,
                              ts::problem_payload(ts::kHighGradeText));
    rig.backend.push_response(agent_tag::kValidatorSolvability, ts::pass_verdict());
    rig.backend.push_response(agent_tag::kValidatorRealism, ts::fail_verdict("scale off"));
    rig.backend.push_response(agent_tag::kValidatorAuthenticity, ts::pass_verdict());
    rig.backend.push_response(agent_tag::kRefineAggregate, ts::problem_payload(ts::kRefText));
    push_pass_sweep(rig);

    const StrategyOutcome outcome = run(rig.problem, rig.topic, rig.config, rig.agents);
    CHECK(outcome.trace.final_status == FinalStatus::PassedAll);
    const IterationRecord& first = outcome.trace.iterations.at(0);
    REQUIRE(first.verdicts.size() == 4);
    CHECK_FALSE(first.verdicts[1].pass); // realism
    CHECK_FALSE(first.verdicts[3].pass); // readability, computed locally

    const std::string prompt = [&] {
        const auto tags = rig.backend.call_tags();
        const auto requests = rig.backend.requests();
        for (std::size_t i = 0; i < tags.size(); ++i) {
            if (tags[i] == "refine.aggregate") return requests[i].messages[0].content;
        }
        return std::string{};
    }();
    const auto realism_pos = prompt.find("[realism]");
    const auto readability_pos = prompt.find("[readability]");
    REQUIRE(realism_pos != std::string::npos);
    REQUIRE(readability_pos != std::string::npos);
    CHECK(realism_pos < readability_pos);
    CHECK(prompt.find("[authenticity]") == std::string::npos);
}

TEST_CASE("centralized: permanent failure exhausts the budget") {
    Rig rig;
    rig.backend.push_response(agent_tag::kConversion, ts::problem_payload(ts::kRefText));
    for (int sweep = 0; sweep < 4; ++sweep) {
        rig.backend.push_response(agent_tag::kValidatorSolvability, ts::pass_verdict());
        rig.backend.push_response(agent_tag::kValidatorRealism,
                                  ts::fail_verdict("never right"));
        rig.backend.push_response(agent_tag::kValidatorAuthenticity, ts::pass_verdict());
    }
    for (int refinement = 0; refinement < 3; ++refinement) {
        rig.backend.push_response(agent_tag::kRefineAggregate,
                                  ts::problem_payload(ts::kSameGradeText));
    }

    const StrategyOutcome outcome = run(rig.problem, rig.topic, rig.config, rig.agents);
    CHECK(outcome.trace.final_status == FinalStatus::Exhausted);
    CHECK(outcome.iterations_used == 3);
    CHECK_FALSE(outcome.stopped_early);
    REQUIRE(outcome.trace.iterations.size() == 4);
    CHECK(outcome.trace.iterations.back().revisions.empty()); // final sweep validates only
    // 1 conversion + 4 sweeps x 3 validators + 3 refinements
    CHECK(outcome.trace.llm_call_count == 16);
    for (int i = 0; i < 4; ++i) CHECK(outcome.trace.iterations[i].iteration == i);
}

TEST_CASE("planned: planner runs between aggregation and revision, once per failing sweep") {
    Rig rig;
    rig.config.strategy = Strategy::CentralizedPlanning;
    rig.backend.push_response(agent_tag::kConversion, ts::problem_payload(ts::kRefText));
    rig.backend.push_response(agent_tag::kValidatorSolvability, ts::pass_verdict());
    rig.backend.push_response(agent_tag::kValidatorRealism, ts::fail_verdict("too small"));
    rig.backend.push_response(agent_tag::kValidatorAuthenticity, ts::pass_verdict());
    rig.backend.push_response(agent_tag::kPlanner,
                              "1. Fix the scale first\n2. Keep the choices consistent");
    rig.backend.push_response(agent_tag::kRefineAggregate,
                              ts::problem_payload(ts::kSameGradeText));
    push_pass_sweep(rig);

    const StrategyOutcome outcome = run(rig.problem, rig.topic, rig.config, rig.agents);
    CHECK(outcome.trace.final_status == FinalStatus::PassedAll);
    CHECK(outcome.iterations_used == 1);
    REQUIRE(outcome.trace.iterations[0].plan.has_value());
    CHECK(outcome.trace.iterations[0].plan->steps.size() == 2);
    CHECK_FALSE(outcome.trace.iterations[1].plan.has_value());

    const auto tags = rig.backend.call_tags();
    const std::vector<std::string> expected{
        "conversion",           "validator.solvability", "validator.realism",
        "validator.authenticity", "planner",             "refine.aggregate",
        "validator.solvability", "validator.realism",    "validator.authenticity"};
    CHECK(tags == expected);
}

TEST_CASE("planned: all-pass sweep never calls the planner") {
    Rig rig;
    rig.config.strategy = Strategy::CentralizedPlanning;
    rig.backend.push_response(agent_tag::kConversion, ts::problem_payload(ts::kRefText));
    push_pass_sweep(rig);
    const StrategyOutcome outcome = run(rig.problem, rig.topic, rig.config, rig.agents);
    CHECK(outcome.trace.final_status == FinalStatus::PassedAll);
    for (const std::string& tag : rig.backend.call_tags()) {
        CHECK(tag != "planner");
        CHECK(tag != "refine.aggregate");
    }
}

TEST_CASE("decentralized: mid-sweep repair passes the updated text onward") {
    Rig rig;
    rig.config.strategy = Strategy::Decentralized;
    rig.backend.push_response(agent_tag::kConversion, ts::problem_payload(ts::kRefText));
    // sweep 0: solvability pass, realism fail -> refine, authenticity pass on new text
    rig.backend.push_response(agent_tag::kValidatorSolvability, ts::pass_verdict());
    rig.backend.push_response(agent_tag::kValidatorRealism,
                              ts::fail_verdict("7 in unrealistically small"));
    rig.backend.push_response(agent_tag::kRefineRealism,
                              ts::problem_payload(ts::kSameGradeText));
    rig.backend.push_response(agent_tag::kValidatorAuthenticity, ts::pass_verdict());
    // sweep 1: clean
    push_pass_sweep(rig);

    const StrategyOutcome outcome = run(rig.problem, rig.topic, rig.config, rig.agents);
    CHECK(outcome.trace.final_status == FinalStatus::PassedAll);
    CHECK(outcome.iterations_used == 1);
    REQUIRE(outcome.trace.iterations.size() == 2);

    const IterationRecord& first = outcome.trace.iterations[0];
    REQUIRE(first.revisions.size() == 1);
    CHECK(first.revisions[0].first == "realism");
    REQUIRE(first.verdicts.size() == 4);
    CHECK(first.verdicts[3].pass); // readability of the updated text

    // the authenticity validator's prompt carries the post-refinement text
    const auto tags = rig.backend.call_tags();
    const auto requests = rig.backend.requests();
    bool checked = false;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        if (tags[i] == "validator.authenticity") {
            CHECK(requests[i].messages[0].content.find(ts::kSameGradeText) !=
                  std::string::npos);
            CHECK(requests[i].messages[0].content.find(ts::kRefText) == std::string::npos);
            checked = true;
            break;
        }
    }
    CHECK(checked);
    CHECK(tags == std::vector<std::string>{
                      "conversion", "validator.solvability", "validator.realism",
                      "refine.realism", "validator.authenticity", "validator.solvability",
                      "validator.realism", "validator.authenticity"});
}

TEST_CASE("decentralized: all four failures fire refiners in priority order") {
    Rig rig;
    rig.config.strategy = Strategy::Decentralized;
    rig.config.max_iterations = 1;
    rig.config.readability_tolerance = 0.0;
    rig.problem.grade_level = -1000.0; // readability can never pass

    rig.backend.push_response(agent_tag::kConversion, ts::problem_payload(ts::kRefText));
    // sweep 0, all LLM validators fail
    rig.backend.push_response(agent_tag::kValidatorSolvability, ts::fail_verdict("s"));
    rig.backend.push_response(agent_tag::kRefineSolvability,
                              ts::problem_payload("after s fix."));
    rig.backend.push_response(agent_tag::kValidatorRealism, ts::fail_verdict("r"));
    rig.backend.push_response(agent_tag::kRefineRealism, ts::problem_payload("after r fix."));
    rig.backend.push_response(agent_tag::kValidatorAuthenticity, ts::fail_verdict("a"));
    rig.backend.push_response(agent_tag::kRefineAuthenticity,
                              ts::problem_payload("after a fix."));
    rig.backend.push_response(agent_tag::kRefineReadability,
                              ts::problem_payload("after read fix."));
    // sweep 1 (validation only)
    rig.backend.push_response(agent_tag::kValidatorSolvability, ts::fail_verdict("s"));
    rig.backend.push_response(agent_tag::kValidatorRealism, ts::fail_verdict("r"));
    rig.backend.push_response(agent_tag::kValidatorAuthenticity, ts::fail_verdict("a"));

    const StrategyOutcome outcome = run(rig.problem, rig.topic, rig.config, rig.agents);
    CHECK(outcome.trace.final_status == FinalStatus::Exhausted);
    CHECK(outcome.iterations_used == 1);

    const IterationRecord& first = outcome.trace.iterations.at(0);
    REQUIRE(first.revisions.size() == 4);
    CHECK(first.revisions[0].first == "solvability");
    CHECK(first.revisions[1].first == "realism");
    CHECK(first.revisions[2].first == "authenticity");
    CHECK(first.revisions[3].first == "readability");
    CHECK(outcome.trace.final_text == "after read fix.");

    // final sweep never refines
    CHECK(outcome.trace.iterations.at(1).revisions.empty());
    const auto tags = rig.backend.call_tags();
    const std::vector<std::string> expected{
        "conversion",
        "validator.solvability", "refine.solvability",
        "validator.realism",     "refine.realism",
        "validator.authenticity", "refine.authenticity",
        "refine.readability",
        "validator.solvability", "validator.realism", "validator.authenticity"};
    CHECK(tags == expected);
}

TEST_CASE("a malformed validator aborts the run with the partial trace") {
    Rig rig;
    rig.backend.push_response(agent_tag::kConversion, ts::problem_payload(ts::kRefText));
    rig.backend.push_response(agent_tag::kValidatorSolvability, ts::pass_verdict());
    for (int i = 0; i < 3; ++i)
        rig.backend.push_response(agent_tag::kValidatorRealism, "not json at all");

    try {
        run(rig.problem, rig.topic, rig.config, rig.agents);
        FAIL("expected RunError");
    } catch (const RunError& e) {
        CHECK(e.kind() == ErrorKind::MalformedOutput);
        CHECK(e.partial_iterations.empty()); // aborted mid-sweep 0
        CHECK(e.last_candidate_text == ts::kRefText);
    }
}

// Independent reference: derive the full expected call sequence and stop
// behavior from a verdict schedule, without consulting the orchestrator.
namespace {

struct Schedule {
    Strategy strategy;
    int k;
    bool readability_always_fails;
    std::vector<std::array<bool, 3>> llm_fail; // [sweep][solvability, realism, authenticity]

    bool clean(int sweep) const {
        if (readability_always_fails) return false;
        return !llm_fail[sweep][0] && !llm_fail[sweep][1] && !llm_fail[sweep][2];
    }

    int stop_sweep() const { // records = stop_sweep()+1
        for (int i = 0; i <= k; ++i) {
            if (clean(i)) return i;
        }
        return k;
    }

    std::vector<std::string> expected_tags() const {
        std::vector<std::string> tags{"conversion"};
        const int stop = stop_sweep();
        for (int i = 0; i <= stop; ++i) {
            const bool refine_allowed = i < k;
            if (strategy == Strategy::Decentralized) {
                const char* validators[] = {"validator.solvability", "validator.realism",
                                            "validator.authenticity"};
                const char* refiners[] = {"refine.solvability", "refine.realism",
                                          "refine.authenticity"};
                for (int c = 0; c < 3; ++c) {
                    tags.push_back(validators[c]);
                    if (llm_fail[i][c] && refine_allowed) tags.push_back(refiners[c]);
                }
                if (readability_always_fails && refine_allowed)
                    tags.push_back("refine.readability");
            } else {
                tags.insert(tags.end(), {"validator.solvability", "validator.realism",
                                         "validator.authenticity"});
                if (!clean(i) && refine_allowed) {
                    if (strategy == Strategy::CentralizedPlanning) tags.push_back("planner");
                    tags.push_back("refine.aggregate");
                }
            }
        }
        return tags;
    }
};

Schedule random_schedule(std::mt19937& rng) {
    Schedule s;
    s.strategy = static_cast<Strategy>(rng() % 3);
    s.k = 1 + static_cast<int>(rng() % 3);
    s.readability_always_fails = rng() % 4 == 0;
    for (int i = 0; i <= s.k; ++i) {
        s.llm_fail.push_back({rng() % 2 == 0, rng() % 2 == 0, rng() % 2 == 0});
    }
    return s;
}

void provision(Rig& rig, const Schedule& s) {
    rig.config.strategy = s.strategy;
    rig.config.max_iterations = s.k;
    if (s.readability_always_fails) {
        rig.problem.grade_level = -1000.0;
        rig.config.readability_tolerance = 0.0;
    } else {
        rig.config.readability_tolerance = 1000.0;
    }
    rig.backend.push_response(agent_tag::kConversion, ts::problem_payload(ts::kRefText));
    for (int i = 0; i <= s.k; ++i) {
        rig.backend.push_response(agent_tag::kValidatorSolvability,
                                  s.llm_fail[i][0] ? ts::fail_verdict("s") : ts::pass_verdict());
        rig.backend.push_response(agent_tag::kValidatorRealism,
                                  s.llm_fail[i][1] ? ts::fail_verdict("r") : ts::pass_verdict());
        rig.backend.push_response(agent_tag::kValidatorAuthenticity,
                                  s.llm_fail[i][2] ? ts::fail_verdict("a") : ts::pass_verdict());
    }
    for (const char* refiner : {agent_tag::kRefineAggregate, agent_tag::kRefineSolvability,
                                agent_tag::kRefineRealism, agent_tag::kRefineAuthenticity,
                                agent_tag::kRefineReadability}) {
        for (int i = 0; i <= s.k; ++i)
            rig.backend.push_response(refiner, ts::problem_payload(ts::kRefText));
    }
    for (int i = 0; i <= s.k; ++i)
        rig.backend.push_response(agent_tag::kPlanner, "1. fix what failed");
}

} // namespace

TEST_CASE("randomized schedules obey the budget, stop, and priority laws") {
    std::mt19937 rng(2026);
    for (int episode = 0; episode < 300; ++episode) {
        const Schedule schedule = random_schedule(rng);
        Rig rig;
        provision(rig, schedule);

        const StrategyOutcome outcome = run(rig.problem, rig.topic, rig.config, rig.agents);
        const RunTrace& trace = outcome.trace;

        // budget law
        CHECK(outcome.iterations_used <= schedule.k);
        CHECK(trace.iterations.size() <= static_cast<std::size_t>(schedule.k) + 1);

        // contiguous iteration indices, 4 verdicts per sweep, priority order
        for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
            const IterationRecord& record = trace.iterations[i];
            CHECK(record.iteration == static_cast<int>(i));
            REQUIRE(record.verdicts.size() == 4);
            for (int c = 0; c < 4; ++c)
                CHECK(record.verdicts[c].criterion == static_cast<Criterion>(c));
            // at most one refinement per criterion per iteration
            std::map<std::string, int> fired;
            for (const auto& [target, text] : record.revisions) ++fired[target];
            for (const auto& [target, count] : fired) CHECK(count == 1);
        }

        // stop at the first all-pass sweep and nowhere else
        const int expected_stop = schedule.stop_sweep();
        CHECK(trace.iterations.size() == static_cast<std::size_t>(expected_stop) + 1);
        const bool expected_pass = schedule.clean(expected_stop);
        CHECK((trace.final_status == FinalStatus::PassedAll) == expected_pass);
        for (std::size_t i = 0; i + 1 < trace.iterations.size(); ++i) {
            const auto& verdicts = trace.iterations[i].verdicts;
            CHECK(std::any_of(verdicts.begin(), verdicts.end(),
                              [](const ValidatorVerdict& v) { return !v.pass; }));
        }

        // full call sequence matches the independent reference
        CHECK(rig.backend.call_tags() == schedule.expected_tags());

        // determinism: an identical script yields an identical semantic trace
        Rig rerun;
        provision(rerun, schedule);
        const StrategyOutcome again = run(rerun.problem, rerun.topic, rerun.config,
                                          rerun.agents);
        CHECK(trace_semantic_json(again.trace) == trace_semantic_json(trace));
    }
}

TEST_CASE("passing exactly at the final sweep is PassedAll but not early") {
    Rig rig;
    rig.config.max_iterations = 1;
    rig.backend.push_response(agent_tag::kConversion, ts::problem_payload(ts::kRefText));
    rig.backend.push_response(agent_tag::kValidatorSolvability, ts::fail_verdict("s"));
    rig.backend.push_response(agent_tag::kValidatorRealism, ts::pass_verdict());
    rig.backend.push_response(agent_tag::kValidatorAuthenticity, ts::pass_verdict());
    rig.backend.push_response(agent_tag::kRefineAggregate,
                              ts::problem_payload(ts::kSameGradeText));
    push_pass_sweep(rig);

    const StrategyOutcome outcome = run(rig.problem, rig.topic, rig.config, rig.agents);
    CHECK(outcome.trace.final_status == FinalStatus::PassedAll);
    CHECK(outcome.iterations_used == 1);
    CHECK_FALSE(outcome.stopped_early);
}
