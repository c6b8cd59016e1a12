#include "refinery/agents.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace refinery {

// --- templates -----------------------------------------------------------------

std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] != '{') {
            out.push_back(tmpl[i++]);
            continue;
        }
        std::size_t j = i + 1;
        while (j < tmpl.size() && (std::islower(static_cast<unsigned char>(tmpl[j])) ||
                                   tmpl[j] == '_')) {
            ++j;
        }
        if (j > i + 1 && j < tmpl.size() && tmpl[j] == '}') {
            const std::string name = tmpl.substr(i + 1, j - i - 1);
            const auto it = values.find(name);
            if (it == values.end())
                throw Error(ErrorKind::TemplateError, "unbound placeholder {" + name + "}");
            out += it->second;
            i = j + 1;
        } else {
            out.push_back(tmpl[i++]); // literal brace (JSON examples etc.)
        }
    }
    return out;
}

namespace {

OutputSchema schema_for_tag(const std::string& tag) {
    if (tag.rfind("validator.", 0) == 0) return OutputSchema::Verdict;
    if (tag == agent_tag::kPlanner) return OutputSchema::Plan;
    return OutputSchema::CandidateText;
}

const char* directive_for(OutputSchema schema) {
    switch (schema) {
        case OutputSchema::Verdict:
            return "Evaluate now. Reply with the verdict JSON object.";
        case OutputSchema::Plan:
            return "Write the numbered revision plan now.";
        case OutputSchema::CandidateText:
            return "Write the problem now, between <problem> and </problem>.";
    }
    return "";
}

const char* corrective_for(OutputSchema schema) {
    switch (schema) {
        case OutputSchema::Verdict:
            return "Your reply could not be parsed. Answer again with a single JSON "
                   "object containing a boolean \"pass\" and a string \"feedback\" "
                   "(nonempty when pass is false).";
        case OutputSchema::Plan:
            return "Your reply could not be parsed. Answer again with a numbered list "
                   "starting at 1, one step per number, no gaps or repeats.";
        case OutputSchema::CandidateText:
            return "Your reply could not be parsed. Answer again with the full problem "
                   "text between <problem> and </problem> markers.";
    }
    return "";
}

} // namespace

PromptLibrary PromptLibrary::load(const std::filesystem::path& dir) {
    static const char* kTags[] = {
        agent_tag::kConversion,          agent_tag::kValidatorSolvability,
        agent_tag::kValidatorRealism,    agent_tag::kValidatorAuthenticity,
        agent_tag::kRefineAggregate,     agent_tag::kRefineSolvability,
        agent_tag::kRefineRealism,       agent_tag::kRefineAuthenticity,
        agent_tag::kRefineReadability,   agent_tag::kPlanner,
    };
    PromptLibrary lib;
    for (const char* tag : kTags) {
        const auto path = dir / (std::string(tag) + ".txt");
        std::ifstream in(path);
        if (!in)
            throw Error(ErrorKind::IoError, "missing prompt template " + path.string());
        std::ostringstream text;
        text << in.rdbuf();
        lib.specs_[tag] = AgentSpec{tag, text.str(), schema_for_tag(tag)};
    }
    return lib;
}

const AgentSpec& PromptLibrary::get(const std::string& tag) const {
    const auto it = specs_.find(tag);
    if (it == specs_.end())
        throw Error(ErrorKind::ConfigError, "no prompt template for tag '" + tag + "'");
    return it->second;
}

// --- structured-output parsing ---------------------------------------------------

namespace {

// First balanced {...} region, string- and escape-aware.
std::optional<std::string> extract_json_object(const std::string& raw, std::size_t from) {
    const std::size_t start = raw.find('{', from);
    if (start == std::string::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = start; i < raw.size(); ++i) {
        const char c = raw[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
        } else if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return raw.substr(start, i - start + 1);
        }
    }
    return std::nullopt;
}

} // namespace

std::optional<ParsedVerdict> try_parse_verdict(const std::string& raw) {
    for (std::size_t pos = raw.find('{'); pos != std::string::npos;
         pos = raw.find('{', pos + 1)) {
        const auto object = extract_json_object(raw, pos);
        if (!object) continue;
        nlohmann::json j = nlohmann::json::parse(*object, nullptr, false);
        if (j.is_discarded() || !j.is_object()) continue;
        if (!j.contains("pass") || !j["pass"].is_boolean()) continue;
        if (!j.contains("feedback") || !j["feedback"].is_string()) continue;
        ParsedVerdict v{j["pass"].get<bool>(), j["feedback"].get<std::string>()};
        if (v.pass) v.feedback.clear();       // pass implies empty feedback
        else if (v.feedback.empty()) continue; // fail requires a reason
        return v;
    }
    return std::nullopt;
}

std::optional<std::string> try_parse_candidate_text(const std::string& raw) {
    const std::string open = "<problem>";
    const std::string close = "</problem>";
    const auto start = raw.find(open);
    if (start == std::string::npos) return std::nullopt;
    const auto end = raw.find(close, start + open.size());
    if (end == std::string::npos) return std::nullopt;
    std::string text = raw.substr(start + open.size(), end - start - open.size());
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return std::nullopt;
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

std::optional<RevisionPlan> try_parse_plan(const std::string& raw) {
    RevisionPlan plan;
    std::istringstream in(raw);
    std::string line;
    while (std::getline(in, line)) {
        std::size_t i = line.find_first_not_of(" \t\r");
        if (i == std::string::npos) continue;
        std::size_t d = i;
        while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
        const bool numbered =
            d > i && d < line.size() && (line[d] == '.' || line[d] == ')');
        if (!numbered) {
            if (plan.steps.empty()) continue; // preamble chatter
            std::string extra = line.substr(i);
            while (!extra.empty() && (extra.back() == '\r' || extra.back() == ' '))
                extra.pop_back();
            if (extra.empty()) continue;
            auto& detail = plan.steps.back().detail;
            if (!detail.empty()) detail += ' ';
            detail += extra;
            continue;
        }
        const int rank = std::stoi(line.substr(i, d - i));
        if (rank != static_cast<int>(plan.steps.size()) + 1) return std::nullopt;
        std::string title = line.substr(d + 1);
        const auto first = title.find_first_not_of(" \t");
        title = first == std::string::npos ? "" : title.substr(first);
        while (!title.empty() && (title.back() == '\r' || title.back() == ' '))
            title.pop_back();
        if (title.empty()) return std::nullopt;
        plan.steps.push_back({rank, title, ""});
    }
    if (plan.steps.empty()) return std::nullopt;
    return plan;
}

// --- agent operations ---------------------------------------------------------------

Agents::Agents(Backend& backend, const PromptLibrary& prompts, AgentOptions options)
    : backend_(backend), prompts_(prompts), options_(std::move(options)) {}

std::string Agents::render_feedback(const AggregateFeedback& feedback) {
    std::ostringstream out;
    for (const auto& [criterion, text] : feedback.items) {
        out << "- [" << criterion_name(criterion) << "] " << text << "\n";
    }
    return out.str();
}

std::string Agents::render_plan(const RevisionPlan& plan) {
    std::ostringstream out;
    for (const auto& step : plan.steps) {
        out << step.rank << ". " << step.title;
        if (!step.detail.empty()) out << " " << step.detail;
        out << "\n";
    }
    return out.str();
}

std::string Agents::render_choices(const std::optional<std::vector<std::string>>& choices) {
    if (!choices || choices->empty()) return "(free response, no answer choices)";
    std::ostringstream out;
    for (std::size_t i = 0; i < choices->size(); ++i) {
        if (i > 0) out << "  ";
        out << static_cast<char>('A' + i) << ") " << (*choices)[i];
    }
    return out.str();
}

std::string Agents::ask_until(const AgentSpec& spec,
                              const std::map<std::string, std::string>& values,
                              const std::function<bool(const std::string&)>& parses) {
    const std::string system =
        "[agent:" + spec.tag + "]\n" + render_template(spec.system_prompt, values);

    std::vector<ChatMessage> messages{{"system", system},
                                      {"user", directive_for(spec.schema)}};
    const int attempts = 1 + options_.parse_retries;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        ChatRequest request{options_.model, messages, options_.temperature,
                            options_.max_tokens};
        calls_.fetch_add(1);
        const ChatResponse response = backend_.complete(request);
        if (parses(response.content)) return response.content;
        messages.push_back({"assistant", response.content});
        messages.push_back({"user", corrective_for(spec.schema)});
    }
    throw Error(ErrorKind::MalformedOutput,
                spec.tag + " produced unparseable output after " +
                    std::to_string(attempts) + " attempts");
}

Candidate Agents::convert(const MathProblem& problem, const Topic& topic, double grade) {
    char grade_buf[32];
    std::snprintf(grade_buf, sizeof(grade_buf), "%.2f", grade);
    const std::map<std::string, std::string> values{
        {"problem", problem.text},
        {"answer", problem.answer},
        {"choices", render_choices(problem.choices)},
        {"topic", topic.name},
        {"grade", grade_buf},
    };
    const AgentSpec& spec = prompts_.get(agent_tag::kConversion);
    const std::string raw = ask_until(
        spec, values, [](const std::string& r) { return try_parse_candidate_text(r).has_value(); });
    return Candidate{*try_parse_candidate_text(raw), 0, std::nullopt, spec.tag};
}

ValidatorVerdict Agents::ask_verdict(const AgentSpec& spec, Criterion criterion,
                                     const std::map<std::string, std::string>& values) {
    const std::string raw = ask_until(
        spec, values, [](const std::string& r) { return try_parse_verdict(r).has_value(); });
    const ParsedVerdict v = *try_parse_verdict(raw);
    return v.pass ? ValidatorVerdict::passed(criterion)
                  : ValidatorVerdict::failed(criterion, v.feedback);
}

ValidatorVerdict Agents::validate_solvability(const Candidate& candidate,
                                              const MathProblem& original) {
    return ask_verdict(prompts_.get(agent_tag::kValidatorSolvability),
                       Criterion::Solvability,
                       {{"problem", candidate.text},
                        {"original", original.text},
                        {"answer", original.answer},
                        {"choices", render_choices(original.choices)}});
}

ValidatorVerdict Agents::validate_realism(const Candidate& candidate, const Topic& topic) {
    return ask_verdict(prompts_.get(agent_tag::kValidatorRealism), Criterion::Realism,
                       {{"problem", candidate.text}, {"topic", topic.name}});
}

ValidatorVerdict Agents::validate_authenticity(const Candidate& candidate,
                                               const Topic& topic) {
    return ask_verdict(prompts_.get(agent_tag::kValidatorAuthenticity),
                       Criterion::Authenticity,
                       {{"problem", candidate.text}, {"topic", topic.name}});
}

Candidate Agents::refined(const Candidate& parent, std::string text,
                          const std::string& tag) {
    return Candidate{std::move(text), parent.iteration + 1, parent.iteration, tag};
}

Candidate Agents::refine_aggregate(const Candidate& candidate, const MathProblem& original,
                                   const Topic& topic, double grade,
                                   const AggregateFeedback& feedback) {
    if (feedback.empty())
        throw Error(ErrorKind::Precondition, "refine requires nonempty feedback");
    char grade_buf[32];
    std::snprintf(grade_buf, sizeof(grade_buf), "%.2f", grade);
    const AgentSpec& spec = prompts_.get(agent_tag::kRefineAggregate);
    const std::string raw = ask_until(
        spec,
        {{"problem", candidate.text},
         {"original", original.text},
         {"topic", topic.name},
         {"grade", grade_buf},
         {"feedback", render_feedback(feedback)}},
        [](const std::string& r) { return try_parse_candidate_text(r).has_value(); });
    return refined(candidate, *try_parse_candidate_text(raw), spec.tag);
}

Candidate Agents::refine_with_plan(const Candidate& candidate, const MathProblem& original,
                                   const Topic& topic, double grade,
                                   const RevisionPlan& plan) {
    if (plan.steps.empty())
        throw Error(ErrorKind::Precondition, "refine requires a nonempty plan");
    char grade_buf[32];
    std::snprintf(grade_buf, sizeof(grade_buf), "%.2f", grade);
    const AgentSpec& spec = prompts_.get(agent_tag::kRefineAggregate);
    const std::string raw = ask_until(
        spec,
        {{"problem", candidate.text},
         {"original", original.text},
         {"topic", topic.name},
         {"grade", grade_buf},
         {"feedback", "Apply this revision plan, in order:\n" + render_plan(plan)}},
        [](const std::string& r) { return try_parse_candidate_text(r).has_value(); });
    return refined(candidate, *try_parse_candidate_text(raw), spec.tag);
}

Candidate Agents::refine_criterion(const Candidate& candidate, const MathProblem& original,
                                   const Topic& topic, double grade, Criterion criterion,
                                   const std::string& feedback) {
    if (feedback.empty())
        throw Error(ErrorKind::Precondition, "refine requires nonempty feedback");
    char grade_buf[32];
    std::snprintf(grade_buf, sizeof(grade_buf), "%.2f", grade);
    const AgentSpec& spec =
        prompts_.get(std::string("refine.") + criterion_name(criterion));
    const std::string raw = ask_until(
        spec,
        {{"problem", candidate.text},
         {"original", original.text},
         {"topic", topic.name},
         {"grade", grade_buf},
         {"feedback", feedback}},
        [](const std::string& r) { return try_parse_candidate_text(r).has_value(); });
    return refined(candidate, *try_parse_candidate_text(raw), spec.tag);
}

RevisionPlan Agents::plan(const AggregateFeedback& feedback, const Candidate& candidate,
                          const MathProblem& original, const Topic& topic) {
    if (feedback.empty())
        throw Error(ErrorKind::Precondition, "plan requires nonempty feedback");
    const AgentSpec& spec = prompts_.get(agent_tag::kPlanner);
    const std::string raw = ask_until(
        spec,
        {{"problem", candidate.text},
         {"original", original.text},
         {"topic", topic.name},
         {"feedback", render_feedback(feedback)}},
        [](const std::string& r) { return try_parse_plan(r).has_value(); });
    RevisionPlan plan = *try_parse_plan(raw);
    validate_plan(plan);
    return plan;
}

} // namespace refinery
