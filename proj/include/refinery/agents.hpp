#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "refinery/core.hpp"
#include "refinery/gateway.hpp"

namespace refinery {

enum class OutputSchema {
    CandidateText, // <problem>...</problem>
    Verdict,       // embedded JSON object with "pass" and "feedback"
    Plan,          // numbered list, ranks contiguous from 1
};

struct AgentSpec {
    std::string tag;           // e.g. "validator.realism"
    std::string system_prompt; // template with {placeholders}
    OutputSchema schema = OutputSchema::CandidateText;
};

// The ten agent tags, matching the prompt file names.
namespace agent_tag {
inline constexpr const char* kConversion = "conversion";
inline constexpr const char* kValidatorSolvability = "validator.solvability";
inline constexpr const char* kValidatorRealism = "validator.realism";
inline constexpr const char* kValidatorAuthenticity = "validator.authenticity";
inline constexpr const char* kRefineAggregate = "refine.aggregate";
inline constexpr const char* kRefineSolvability = "refine.solvability";
inline constexpr const char* kRefineRealism = "refine.realism";
inline constexpr const char* kRefineAuthenticity = "refine.authenticity";
inline constexpr const char* kRefineReadability = "refine.readability";
inline constexpr const char* kPlanner = "planner";
} // namespace agent_tag

// Substitutes every {name} placeholder ([a-z_]+ between braces). An unbound
// placeholder throws Error{TemplateError}; other brace content passes through.
std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& values);

// One system-prompt template file per agent tag: <dir>/<tag>.txt.
class PromptLibrary {
public:
    static PromptLibrary load(const std::filesystem::path& dir);

    const AgentSpec& get(const std::string& tag) const;

private:
    std::map<std::string, AgentSpec> specs_;
};

struct ParsedVerdict {
    bool pass = false;
    std::string feedback;
};

// Single-shot parsers; std::nullopt signals the corrective-retry loop.
std::optional<ParsedVerdict> try_parse_verdict(const std::string& raw);
std::optional<std::string> try_parse_candidate_text(const std::string& raw);
std::optional<RevisionPlan> try_parse_plan(const std::string& raw);

struct AgentOptions {
    std::string model = "gpt-5.2";
    double temperature = 0.0;
    std::optional<int> max_tokens;
    int parse_retries = 2; // corrective re-asks after the first failed parse
};

// Stateless prompt-and-parse layer over a Backend. One instance per pipeline
// run so llm_calls() reflects that run alone; concurrent calls are safe.
class Agents {
public:
    Agents(Backend& backend, const PromptLibrary& prompts, AgentOptions options = {});

    Candidate convert(const MathProblem& problem, const Topic& topic, double grade);

    ValidatorVerdict validate_solvability(const Candidate& candidate,
                                          const MathProblem& original);
    ValidatorVerdict validate_realism(const Candidate& candidate, const Topic& topic);
    ValidatorVerdict validate_authenticity(const Candidate& candidate, const Topic& topic);

    Candidate refine_aggregate(const Candidate& candidate, const MathProblem& original,
                               const Topic& topic, double grade,
                               const AggregateFeedback& feedback);
    Candidate refine_with_plan(const Candidate& candidate, const MathProblem& original,
                               const Topic& topic, double grade, const RevisionPlan& plan);
    Candidate refine_criterion(const Candidate& candidate, const MathProblem& original,
                               const Topic& topic, double grade, Criterion criterion,
                               const std::string& feedback);

    RevisionPlan plan(const AggregateFeedback& feedback, const Candidate& candidate,
                      const MathProblem& original, const Topic& topic);

    int llm_calls() const { return calls_.load(); }

    static std::string render_feedback(const AggregateFeedback& feedback);
    static std::string render_plan(const RevisionPlan& plan);
    static std::string render_choices(const std::optional<std::vector<std::string>>& choices);

private:
    // Renders the spec's template, asks the backend, and re-asks with a
    // corrective instruction until `parses` accepts the reply or the retry
    // budget is spent (then Error{MalformedOutput}). Returns the accepted raw
    // reply.
    std::string ask_until(const AgentSpec& spec,
                          const std::map<std::string, std::string>& values,
                          const std::function<bool(const std::string&)>& parses);
    ValidatorVerdict ask_verdict(const AgentSpec& spec, Criterion criterion,
                                 const std::map<std::string, std::string>& values);
    Candidate refined(const Candidate& parent, std::string text, const std::string& tag);

    Backend& backend_;
    const PromptLibrary& prompts_;
    AgentOptions options_;
    std::atomic<int> calls_{0};
};

} // namespace refinery
