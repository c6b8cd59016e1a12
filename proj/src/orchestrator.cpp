#include "refinery/orchestrator.hpp"

#include "refinery/readability.hpp"

namespace refinery {

namespace {

struct RunState {
    const MathProblem& problem;
    const Topic& topic;
    const StrategyConfig& config;
    Agents& agents;

    ValidatorVerdict validate(const Candidate& candidate, Criterion criterion) const {
        switch (criterion) {
            case Criterion::Solvability:
                return agents.validate_solvability(candidate, problem);
            case Criterion::Realism:
                return agents.validate_realism(candidate, topic);
            case Criterion::Authenticity:
                return agents.validate_authenticity(candidate, topic);
            case Criterion::Readability:
                return readability_check(candidate.text, problem.grade_level,
                                         config.readability_tolerance);
        }
        throw Error(ErrorKind::Precondition, "unknown criterion");
    }
};

// One centralized sweep: batch-validate, then one aggregate revision (with an
// intervening plan when planning is on). Returns true when the sweep saw no
// failures.
bool centralized_sweep(RunState& state, Candidate& candidate, IterationRecord& record,
                       bool refine_allowed) {
    for (Criterion criterion : criterion_priority_order()) {
        record.verdicts.push_back(state.validate(candidate, criterion));
    }
    const AggregateFeedback feedback =
        AggregateFeedback::from_verdicts(record.verdicts);
    if (feedback.empty()) return true;
    if (!refine_allowed) return false;

    Candidate next{};
    if (state.config.strategy == Strategy::CentralizedPlanning) {
        record.plan = state.agents.plan(feedback, candidate, state.problem, state.topic);
        next = state.agents.refine_with_plan(candidate, state.problem, state.topic,
                                             state.problem.grade_level, *record.plan);
    } else {
        next = state.agents.refine_aggregate(candidate, state.problem, state.topic,
                                             state.problem.grade_level, feedback);
    }
    record.revisions.emplace_back("aggregate", next.text);
    candidate = std::move(next);
    return false;
}

// One decentralized sweep: validator/refiner pairs in priority order, each
// refiner firing at most once, each later validator seeing the updated text.
bool decentralized_sweep(RunState& state, Candidate& candidate, IterationRecord& record,
                         bool refine_allowed) {
    bool clean = true;
    for (Criterion criterion : criterion_priority_order()) {
        const ValidatorVerdict verdict = state.validate(candidate, criterion);
        record.verdicts.push_back(verdict);
        if (verdict.pass) continue;
        clean = false;
        if (!refine_allowed) continue;
        candidate = state.agents.refine_criterion(candidate, state.problem, state.topic,
                                                  state.problem.grade_level, criterion,
                                                  verdict.feedback);
        record.revisions.emplace_back(criterion_name(criterion), candidate.text);
    }
    return clean;
}

} // namespace

StrategyOutcome run(const MathProblem& problem, const Topic& topic,
                    const StrategyConfig& config, Agents& agents) {
    if (config.max_iterations < 1)
        throw Error(ErrorKind::Precondition, "max_iterations must be >= 1");
    validate_problem(problem);
    if (topic.name.empty())
        throw Error(ErrorKind::Precondition, "topic name must be nonempty");

    RunState state{problem, topic, config, agents};
    RunTrace trace;
    trace.problem_id = problem.id;
    trace.topic = topic.name;
    trace.strategy = config.strategy;

    Candidate candidate;
    try {
        candidate = agents.convert(problem, topic, problem.grade_level);

        const int budget = config.max_iterations;
        for (int sweep = 0; sweep <= budget; ++sweep) {
            const bool refine_allowed = sweep < budget;
            IterationRecord record;
            record.iteration = sweep;
            record.candidate_text = candidate.text;

            const bool clean =
                config.strategy == Strategy::Decentralized
                    ? decentralized_sweep(state, candidate, record, refine_allowed)
                    : centralized_sweep(state, candidate, record, refine_allowed);
            trace.iterations.push_back(std::move(record));
            if (clean) {
                trace.final_status = FinalStatus::PassedAll;
                break;
            }
            if (!refine_allowed) {
                trace.final_status = FinalStatus::Exhausted;
                break;
            }
        }
    } catch (const Error& e) {
        throw RunError(e, std::move(trace.iterations), candidate.text);
    }

    trace.final_text = candidate.text;
    trace.llm_call_count = agents.llm_calls();

    StrategyOutcome outcome;
    outcome.iterations_used = static_cast<int>(trace.iterations.size()) - 1;
    outcome.stopped_early =
        trace.final_status == FinalStatus::PassedAll &&
        static_cast<int>(trace.iterations.size()) < config.max_iterations + 1;
    outcome.trace = std::move(trace);
    return outcome;
}

} // namespace refinery
