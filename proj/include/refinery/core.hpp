#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "refinery/errors.hpp"

namespace refinery {

// The four quality criteria, numbered in refinement priority order
// (lower value = higher priority: correctness before style).
enum class Criterion {
    Solvability = 0,
    Realism = 1,
    Authenticity = 2,
    Readability = 3,
};

inline constexpr int kCriterionCount = 4;

const char* criterion_name(Criterion c);
Criterion criterion_from_name(const std::string& name); // throws ParseError

// [Solvability, Realism, Authenticity, Readability]
std::array<Criterion, kCriterionCount> criterion_priority_order();

enum class Strategy {
    Centralized,
    CentralizedPlanning,
    Decentralized,
};

const char* strategy_name(Strategy s); // "centralized" | "planned" | "decentralized"
Strategy strategy_from_name(const std::string& name); // throws ParseError

enum class FinalStatus {
    PassedAll,
    Exhausted,
};

struct MathProblem {
    std::string id;
    std::string text;
    std::string answer;
    std::optional<std::vector<std::string>> choices;
    std::string curriculum_unit;
    double grade_level = 0.0; // Flesch-Kincaid grade of `text`
};

// Checks id/text nonempty and, when choices exist, that the answer is one of
// them under normalize_answer. Throws Error{Precondition} on violation.
void validate_problem(const MathProblem& problem);

struct Topic {
    std::string name;
    std::optional<std::string> category;
};

// Trim, collapse internal whitespace runs to single spaces, lowercase.
std::string normalize_answer(const std::string& raw);

struct ValidatorVerdict {
    Criterion criterion = Criterion::Solvability;
    bool pass = false;
    std::string feedback; // empty iff pass

    static ValidatorVerdict passed(Criterion c);
    // Throws Error{Precondition} when feedback is empty.
    static ValidatorVerdict failed(Criterion c, std::string feedback);
};

struct Candidate {
    std::string text;
    int iteration = 0; // 0 = conversion (Zero-Shot) output
    std::optional<int> parent_iteration;
    std::string produced_by; // agent tag, e.g. "conversion", "refine.realism"
};

// Failed criteria only, ordered by priority, at most one entry per criterion.
struct AggregateFeedback {
    std::vector<std::pair<Criterion, std::string>> items;

    static AggregateFeedback from_verdicts(std::span<const ValidatorVerdict> verdicts);
    bool empty() const { return items.empty(); }
};

struct RevisionPlan {
    struct Step {
        int rank = 0; // 1-based, contiguous
        std::string title;
        std::string detail;
    };
    std::vector<Step> steps;
};

// Throws Error{Precondition} unless ranks are exactly 1..n in order.
void validate_plan(const RevisionPlan& plan);

struct StrategyConfig {
    Strategy strategy = Strategy::Centralized;
    int max_iterations = 3;          // refinement budget k
    double readability_tolerance = 1.0; // allowed |candidate FK - reference FK| in grade levels
};

struct IterationRecord {
    int iteration = 0; // sweep index, 0 = Zero-Shot validation
    std::string candidate_text;
    std::vector<ValidatorVerdict> verdicts; // priority order; interleaved sweep order for Decentralized
    std::optional<RevisionPlan> plan;
    // (criterion name or "aggregate", revised text), in the order revisions fired
    std::vector<std::pair<std::string, std::string>> revisions;
};

inline constexpr int kTraceSchemaVersion = 1;

struct RunTrace {
    std::string problem_id;
    std::string topic;
    Strategy strategy = Strategy::Centralized;
    std::vector<IterationRecord> iterations;
    std::string final_text;
    FinalStatus final_status = FinalStatus::Exhausted;
    int llm_call_count = 0;
    std::string created_at; // ISO-8601 UTC; excluded from determinism comparisons
};

void to_json(nlohmann::json& j, const ValidatorVerdict& v);
void from_json(const nlohmann::json& j, ValidatorVerdict& v);
void to_json(nlohmann::json& j, const RevisionPlan& p);
void from_json(const nlohmann::json& j, RevisionPlan& p);
void to_json(nlohmann::json& j, const IterationRecord& r);
void from_json(const nlohmann::json& j, IterationRecord& r);
void to_json(nlohmann::json& j, const RunTrace& t);
void from_json(const nlohmann::json& j, RunTrace& t);

// Trace JSON with volatile fields (created_at) removed; the unit of comparison
// for resume bookkeeping and reproducibility checks.
nlohmann::json trace_semantic_json(const RunTrace& trace);

} // namespace refinery
