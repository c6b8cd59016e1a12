#include "refinery/core.hpp"

#include <algorithm>
#include <cctype>

namespace refinery {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::EmptyText: return "EmptyText";
        case ErrorKind::Precondition: return "Precondition";
        case ErrorKind::TransportError: return "TransportError";
        case ErrorKind::AuthError: return "AuthError";
        case ErrorKind::ScriptExhausted: return "ScriptExhausted";
        case ErrorKind::CacheMiss: return "CacheMiss";
        case ErrorKind::MalformedOutput: return "MalformedOutput";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::DuplicateId: return "DuplicateId";
        case ErrorKind::MixedStrategy: return "MixedStrategy";
        case ErrorKind::WrongArity: return "WrongArity";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::TemplateError: return "TemplateError";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::IoError: return "IoError";
    }
    return "Error";
}

const char* criterion_name(Criterion c) {
    switch (c) {
        case Criterion::Solvability: return "solvability";
        case Criterion::Realism: return "realism";
        case Criterion::Authenticity: return "authenticity";
        case Criterion::Readability: return "readability";
    }
    return "?";
}

Criterion criterion_from_name(const std::string& name) {
    for (Criterion c : criterion_priority_order()) {
        if (name == criterion_name(c)) return c;
    }
    throw Error(ErrorKind::ParseError, "unknown criterion '" + name + "'");
}

std::array<Criterion, kCriterionCount> criterion_priority_order() {
    return {Criterion::Solvability, Criterion::Realism, Criterion::Authenticity,
            Criterion::Readability};
}

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Centralized: return "centralized";
        case Strategy::CentralizedPlanning: return "planned";
        case Strategy::Decentralized: return "decentralized";
    }
    return "?";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "centralized") return Strategy::Centralized;
    if (name == "planned") return Strategy::CentralizedPlanning;
    if (name == "decentralized") return Strategy::Decentralized;
    throw Error(ErrorKind::ParseError, "unknown strategy '" + name + "'");
}

std::string normalize_answer(const std::string& raw) {
    std::string out;
    out.reserve(raw.size());
    bool in_space = true; // swallow leading whitespace
    for (unsigned char ch : raw) {
        if (std::isspace(ch)) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out.push_back(' ');
        in_space = false;
        out.push_back(static_cast<char>(std::tolower(ch)));
    }
    return out;
}

void validate_problem(const MathProblem& problem) {
    if (problem.id.empty())
        throw Error(ErrorKind::Precondition, "problem id must be nonempty");
    if (problem.text.empty())
        throw Error(ErrorKind::Precondition, "problem '" + problem.id + "' has empty text");
    if (problem.choices) {
        const std::string want = normalize_answer(problem.answer);
        const bool found = std::any_of(
            problem.choices->begin(), problem.choices->end(),
            [&](const std::string& c) { return normalize_answer(c) == want; });
        if (!found)
            throw Error(ErrorKind::Precondition,
                        "problem '" + problem.id + "': answer is not among the choices");
    }
}

ValidatorVerdict ValidatorVerdict::passed(Criterion c) {
    return ValidatorVerdict{c, true, ""};
}

ValidatorVerdict ValidatorVerdict::failed(Criterion c, std::string feedback) {
    if (feedback.empty())
        throw Error(ErrorKind::Precondition, "fail verdict requires nonempty feedback");
    return ValidatorVerdict{c, false, std::move(feedback)};
}

AggregateFeedback AggregateFeedback::from_verdicts(std::span<const ValidatorVerdict> verdicts) {
    AggregateFeedback out;
    for (Criterion c : criterion_priority_order()) {
        for (const ValidatorVerdict& v : verdicts) {
            if (v.criterion == c && !v.pass) {
                out.items.emplace_back(c, v.feedback);
                break; // at most one entry per criterion
            }
        }
    }
    return out;
}

void validate_plan(const RevisionPlan& plan) {
    for (std::size_t i = 0; i < plan.steps.size(); ++i) {
        if (plan.steps[i].rank != static_cast<int>(i) + 1)
            throw Error(ErrorKind::Precondition, "plan ranks must be contiguous from 1");
    }
}

// --- JSON serialization ----------------------------------------------------

void to_json(nlohmann::json& j, const ValidatorVerdict& v) {
    j = nlohmann::json{{"criterion", criterion_name(v.criterion)},
                       {"pass", v.pass},
                       {"feedback", v.feedback}};
}

void from_json(const nlohmann::json& j, ValidatorVerdict& v) {
    v.criterion = criterion_from_name(j.at("criterion").get<std::string>());
    v.pass = j.at("pass").get<bool>();
    v.feedback = j.at("feedback").get<std::string>();
}

void to_json(nlohmann::json& j, const RevisionPlan& p) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : p.steps) {
        steps.push_back({{"rank", s.rank}, {"title", s.title}, {"detail", s.detail}});
    }
    j = nlohmann::json{{"steps", std::move(steps)}};
}

void from_json(const nlohmann::json& j, RevisionPlan& p) {
    p.steps.clear();
    for (const auto& s : j.at("steps")) {
        p.steps.push_back({s.at("rank").get<int>(), s.at("title").get<std::string>(),
                           s.at("detail").get<std::string>()});
    }
}

void to_json(nlohmann::json& j, const IterationRecord& r) {
    j = nlohmann::json{{"iteration", r.iteration},
                       {"candidate_text", r.candidate_text},
                       {"verdicts", r.verdicts},
                       {"revisions", nlohmann::json::array()}};
    for (const auto& [target, text] : r.revisions) {
        j["revisions"].push_back({target, text});
    }
    if (r.plan) j["plan"] = *r.plan;
}

void from_json(const nlohmann::json& j, IterationRecord& r) {
    r.iteration = j.at("iteration").get<int>();
    r.candidate_text = j.at("candidate_text").get<std::string>();
    r.verdicts = j.at("verdicts").get<std::vector<ValidatorVerdict>>();
    r.revisions.clear();
    for (const auto& rev : j.at("revisions")) {
        r.revisions.emplace_back(rev.at(0).get<std::string>(), rev.at(1).get<std::string>());
    }
    if (j.contains("plan")) r.plan = j.at("plan").get<RevisionPlan>();
    else r.plan.reset();
}

void to_json(nlohmann::json& j, const RunTrace& t) {
    j = nlohmann::json{{"schema_version", kTraceSchemaVersion},
                       {"problem_id", t.problem_id},
                       {"topic", t.topic},
                       {"strategy", strategy_name(t.strategy)},
                       {"iterations", t.iterations},
                       {"final_text", t.final_text},
                       {"final_status", t.final_status == FinalStatus::PassedAll
                                            ? "PassedAll"
                                            : "Exhausted"},
                       {"llm_call_count", t.llm_call_count}};
    if (!t.created_at.empty()) j["created_at"] = t.created_at;
}

void from_json(const nlohmann::json& j, RunTrace& t) {
    t.problem_id = j.at("problem_id").get<std::string>();
    t.topic = j.at("topic").get<std::string>();
    t.strategy = strategy_from_name(j.at("strategy").get<std::string>());
    t.iterations = j.at("iterations").get<std::vector<IterationRecord>>();
    t.final_text = j.at("final_text").get<std::string>();
    const std::string status = j.at("final_status").get<std::string>();
    if (status == "PassedAll") t.final_status = FinalStatus::PassedAll;
    else if (status == "Exhausted") t.final_status = FinalStatus::Exhausted;
    else throw Error(ErrorKind::ParseError, "unknown final_status '" + status + "'");
    t.llm_call_count = j.at("llm_call_count").get<int>();
    t.created_at = j.value("created_at", "");
}

nlohmann::json trace_semantic_json(const RunTrace& trace) {
    nlohmann::json j = trace;
    j.erase("created_at");
    return j;
}

} // namespace refinery
