#pragma once

#include "refinery/agents.hpp"
#include "refinery/core.hpp"

namespace refinery {

struct StrategyOutcome {
    RunTrace trace;
    bool stopped_early = false; // all-pass sweep before the final possible sweep
    int iterations_used = 0;    // refinement rounds performed
};

// Carried by run() failures so batch callers can record what happened before
// the error.
class RunError : public Error {
public:
    RunError(const Error& cause, std::vector<IterationRecord> partial,
             std::string last_candidate)
        : Error(cause.kind(), cause.message()),
          partial_iterations(std::move(partial)),
          last_candidate_text(std::move(last_candidate)) {}

    std::vector<IterationRecord> partial_iterations;
    std::string last_candidate_text;
};

// Runs the full generate-validate-revise loop for one (problem, topic) pair:
// conversion, then up to config.max_iterations refinement sweeps plus a final
// validation-only sweep, stopping at the first sweep with zero failures.
// Solvability/realism/authenticity verdicts come from LLM validators;
// readability is checked locally against problem.grade_level.
StrategyOutcome run(const MathProblem& problem, const Topic& topic,
                    const StrategyConfig& config, Agents& agents);

} // namespace refinery
