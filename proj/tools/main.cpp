// refinery: personalize math word problems to student-interest topics with a
// generate-validate-revise agent loop; analyze the resulting traces.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "refinery/analytics.hpp"
#include "refinery/orchestrator.hpp"
#include "refinery/pipeline.hpp"
#include "refinery/readability.hpp"

namespace {

using namespace refinery;

#ifndef REFINERY_DEFAULT_PROMPTS_DIR
#define REFINERY_DEFAULT_PROMPTS_DIR "prompts"
#endif

struct BackendOptions {
    std::string kind = "scripted"; // live | scripted | replay | record
    std::string base_url;
    std::string cache_path;
    std::string script_path;
};

// Script file: JSONL lines {"tag": "...", "content": "...", "repeat": bool?}.
// Plain entries queue FIFO per tag; repeat entries become the tag's default
// handler once queues drain.
void load_script(ScriptedBackend& backend, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open script file " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ParseError,
                        path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const std::string tag = j.value("tag", "");
        const std::string content = j.at("content").get<std::string>();
        if (j.value("repeat", false)) {
            backend.set_default_handler(tag,
                                        [content](const ChatRequest&) { return content; });
        } else if (tag.empty()) {
            backend.push_response(content);
        } else {
            backend.push_response(tag, content);
        }
    }
}

struct Wiring {
    std::unique_ptr<ScriptedBackend> scripted;
    std::unique_ptr<LiveBackend> live;
    std::unique_ptr<ReplayBackend> replay;
    std::unique_ptr<RecordBackend> record;
    Backend* backend = nullptr;
};

Wiring make_backend(const BackendOptions& options) {
    Wiring w;
    const auto env = [](const char* name) {
        const char* v = std::getenv(name);
        return v ? std::string(v) : std::string();
    };
    const bool record = options.kind == "record";
    const BackendKind kind = options.kind == "scripted" ? BackendKind::Scripted
                             : options.kind == "replay" ? BackendKind::Replay
                                                        : BackendKind::Live;
    switch (kind) {
        case BackendKind::Scripted:
            w.scripted = std::make_unique<ScriptedBackend>();
            if (!options.script_path.empty()) load_script(*w.scripted, options.script_path);
            w.backend = w.scripted.get();
            return w;
        case BackendKind::Replay:
            if (options.cache_path.empty() || !std::filesystem::exists(options.cache_path))
                throw Error(ErrorKind::ConfigError,
                            "replay backend requires an existing --cache file");
            w.replay = std::make_unique<ReplayBackend>(options.cache_path);
            w.backend = w.replay.get();
            return w;
        case BackendKind::Live:
            break;
    }
    LiveConfig config;
    config.base_url = !options.base_url.empty() ? options.base_url : env("REFINERY_BASE_URL");
    config.api_key = env("REFINERY_API_KEY");
    if (config.base_url.empty())
        throw Error(ErrorKind::ConfigError,
                    "live backend requires --base-url or REFINERY_BASE_URL");
    if (config.api_key.empty())
        throw Error(ErrorKind::ConfigError, "live backend requires REFINERY_API_KEY");
    w.live = std::make_unique<LiveBackend>(std::move(config));
    if (record) {
        if (options.cache_path.empty())
            throw Error(ErrorKind::ConfigError, "record backend requires --cache");
        w.record = std::make_unique<RecordBackend>(*w.live, options.cache_path);
        w.backend = w.record.get();
    } else {
        w.backend = w.live.get();
    }
    return w;
}

std::string resolve_prompts_dir(std::string flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (std::filesystem::exists("prompts/conversion.txt")) return "prompts";
    return REFINERY_DEFAULT_PROMPTS_DIR;
}

void print_trace(std::ostream& out, const RunTrace& trace) {
    out << "problem: " << trace.problem_id << "  topic: " << trace.topic
        << "  strategy: " << strategy_name(trace.strategy) << "\n";
    for (const IterationRecord& record : trace.iterations) {
        out << "iteration " << record.iteration << ":";
        for (const ValidatorVerdict& v : record.verdicts) {
            out << " " << criterion_name(v.criterion) << "=" << (v.pass ? "pass" : "FAIL");
        }
        out << "\n";
        for (const ValidatorVerdict& v : record.verdicts) {
            if (!v.pass) out << "    " << criterion_name(v.criterion) << ": " << v.feedback << "\n";
        }
        if (record.plan) {
            out << "    plan:\n";
            for (const auto& step : record.plan->steps) {
                out << "      " << step.rank << ". " << step.title << "\n";
            }
        }
        for (const auto& [target, text] : record.revisions) {
            out << "    revision (" << target << "): " << text << "\n";
        }
    }
    out << "final status: "
        << (trace.final_status == FinalStatus::PassedAll ? "PassedAll" : "Exhausted")
        << " (" << (trace.iterations.size() - 1) << " refinement iterations, "
        << trace.llm_call_count << " llm calls)\n";
    out << "final text: " << trace.final_text << "\n";
}

int cmd_personalize(const std::string& problems_path, const std::string& problem_id,
                    const std::string& inline_text, const std::string& inline_answer,
                    const std::string& topic_name, const StrategyConfig& strategy,
                    const BackendOptions& backend_options, const std::string& prompts_dir,
                    const AgentOptions& agent_options, const std::string& out_path) {
    MathProblem problem;
    if (!inline_text.empty()) {
        problem.id = "inline";
        problem.text = inline_text;
        problem.answer = inline_answer;
        problem.grade_level = fk_grade_of_text(inline_text);
    } else {
        if (problems_path.empty() || problem_id.empty())
            throw Error(ErrorKind::ConfigError,
                        "need --text or both --problems and --id");
        const auto problems = load_problems(problems_path);
        const auto it = std::find_if(problems.begin(), problems.end(),
                                     [&](const MathProblem& p) { return p.id == problem_id; });
        if (it == problems.end())
            throw Error(ErrorKind::ConfigError, "no problem with id '" + problem_id + "'");
        problem = *it;
    }

    Wiring wiring = make_backend(backend_options);
    const PromptLibrary prompts = PromptLibrary::load(resolve_prompts_dir(prompts_dir));
    Agents agents(*wiring.backend, prompts, agent_options);
    const StrategyOutcome outcome = run(problem, Topic{topic_name, std::nullopt},
                                        strategy, agents);
    print_trace(std::cout, outcome.trace);
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::app);
        if (!out) throw Error(ErrorKind::IoError, "cannot open " + out_path);
        out << nlohmann::json(outcome.trace).dump() << "\n";
    }
    return outcome.trace.final_status == FinalStatus::PassedAll ? 0 : 2;
}

int cmd_batch(const std::string& problems_path, const std::string& topics_path,
              BatchConfig batch, const BackendOptions& backend_options,
              const std::string& prompts_dir) {
    Dataset dataset{load_problems(problems_path), load_topics(topics_path)};
    Wiring wiring = make_backend(backend_options);
    const PromptLibrary prompts = PromptLibrary::load(resolve_prompts_dir(prompts_dir));
    const BatchSummary summary = run_batch(dataset, batch, *wiring.backend, prompts);
    std::cout << "passed=" << summary.passed << " exhausted=" << summary.exhausted
              << " errored=" << summary.errored << " skipped=" << summary.skipped << "\n";
    return 0;
}

std::vector<RunTrace> load_traces_checked(const std::string& path,
                                          const std::string& strategy_filter) {
    TraceFile file = load_traces(path);
    if (!strategy_filter.empty()) {
        const Strategy wanted = strategy_from_name(strategy_filter);
        std::erase_if(file.traces,
                      [&](const RunTrace& t) { return t.strategy != wanted; });
    }
    if (file.traces.empty()) throw Error(ErrorKind::EmptyInput, "no traces in " + path);
    return file.traces;
}

int cmd_analyze_failures(const std::string& traces_path, const std::string& strategy_filter,
                         const std::string& out_path) {
    const auto traces = load_traces_checked(traces_path, strategy_filter);
    const FailureCurve curve = failure_curve(traces);
    if (out_path.empty()) {
        write_failure_curve_csv(std::cout, curve);
    } else {
        std::ofstream out(out_path);
        write_failure_curve_csv(out, curve);
    }
    return 0;
}

int cmd_analyze_prevalence(const std::string& traces_path, const std::string& group_by,
                           int top_k, const std::string& problems_path,
                           const std::string& strategy_filter, const std::string& out_path) {
    const auto traces = load_traces_checked(traces_path, strategy_filter);
    std::map<std::string, std::string> units;
    const GroupBy mode = group_by == "unit" ? GroupBy::CurriculumUnit : GroupBy::Topic;
    if (mode == GroupBy::CurriculumUnit) {
        if (problems_path.empty())
            throw Error(ErrorKind::ConfigError, "--group-by unit requires --problems");
        for (const MathProblem& p : load_problems(problems_path))
            units[p.id] = p.curriculum_unit;
    }
    const auto rows = prevalence(traces, mode, top_k,
                                 mode == GroupBy::CurriculumUnit ? &units : nullptr);
    if (out_path.empty()) {
        write_prevalence_csv(std::cout, rows);
    } else {
        std::ofstream out(out_path);
        write_prevalence_csv(out, rows);
    }
    return 0;
}

int cmd_agree(const std::string& labels_path, const std::string& criterion_filter) {
    const AnnotationSet annotations = load_labels_csv(labels_path);
    std::vector<AgreementReport> reports;
    for (Criterion criterion : criterion_priority_order()) {
        if (!criterion_filter.empty() && criterion_filter != criterion_name(criterion))
            continue;
        const bool present = std::any_of(
            annotations.items.begin(), annotations.items.end(),
            [&](const AnnotationItem& item) { return item.criterion == criterion; });
        if (!present) continue;
        reports.push_back(agreement_report(annotations, criterion));
    }
    if (reports.empty()) throw Error(ErrorKind::EmptyInput, "no matching label rows");
    write_agreement_table(std::cout, reports);
    return 0;
}

int cmd_readability(const std::string& text, const std::string& file_path) {
    std::string input = text;
    if (input.empty() && !file_path.empty()) {
        std::ifstream in(file_path);
        if (!in) throw Error(ErrorKind::IoError, "cannot open " + file_path);
        std::ostringstream buf;
        buf << in.rdbuf();
        input = buf.str();
    }
    const TextStats stats = count_stats(input);
    char line[128];
    std::snprintf(line, sizeof(line), "%.2f", fk_grade(stats));
    std::cout << line << "\n"
              << "sentences=" << stats.sentences << " words=" << stats.words
              << " syllables=" << stats.syllables << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"personalize math word problems with validated agent refinement"};
    app.require_subcommand(1);

    BackendOptions backend_options;
    std::string prompts_dir;
    AgentOptions agent_options;
    std::string strategy_flag;
    StrategyConfig strategy;

    const auto add_backend_flags = [&](CLI::App* cmd) {
        cmd->add_option("--backend", backend_options.kind, "live|scripted|replay|record")
            ->check(CLI::IsMember({"live", "scripted", "replay", "record"}));
        cmd->add_option("--base-url", backend_options.base_url,
                        "OpenAI-compatible endpoint base URL");
        cmd->add_option("--cache", backend_options.cache_path,
                        "record/replay cache file (JSONL)");
        cmd->add_option("--script", backend_options.script_path,
                        "scripted-backend response file (JSONL)");
        cmd->add_option("--model", agent_options.model, "model name");
        cmd->add_option("--prompts", prompts_dir, "prompt template directory");
    };
    const auto add_strategy_flags = [&](CLI::App* cmd) {
        cmd->add_option("--strategy", strategy_flag, "centralized|planned|decentralized")
            ->required()
            ->check(CLI::IsMember({"centralized", "planned", "decentralized"}));
        cmd->add_option("--max-iters", strategy.max_iterations, "refinement budget")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--tolerance", strategy.readability_tolerance,
                        "readability tolerance in FK grade levels");
    };

    // personalize
    auto* personalize = app.add_subcommand("personalize", "run one problem through the loop");
    std::string problems_path, problem_id, inline_text, inline_answer, topic_name, out_path;
    personalize->add_option("--problems", problems_path, "problems JSONL file");
    personalize->add_option("--id", problem_id, "problem id within --problems");
    personalize->add_option("--text", inline_text, "inline problem text");
    personalize->add_option("--answer", inline_answer, "inline problem answer");
    personalize->add_option("--topic", topic_name, "target topic")->required();
    personalize->add_option("--out", out_path, "append the trace to this JSONL file");
    add_strategy_flags(personalize);
    add_backend_flags(personalize);

    // batch
    auto* batch_cmd = app.add_subcommand("batch", "run a problems x topics batch");
    std::string topics_path;
    BatchConfig batch;
    std::string pairing_flag = "round-robin";
    batch_cmd->add_option("--problems", problems_path, "problems JSONL file")->required();
    batch_cmd->add_option("--topics", topics_path, "topics file")->required();
    batch_cmd->add_option("--out", out_path, "output traces JSONL file")->required();
    batch_cmd->add_option("--concurrency", batch.concurrency, "max runs in flight")
        ->check(CLI::PositiveNumber);
    batch_cmd->add_option("--pairing", pairing_flag, "round-robin|cross")
        ->check(CLI::IsMember({"round-robin", "cross"}));
    batch_cmd->add_flag("--resume", batch.resume, "skip pairs already in the output file");
    add_strategy_flags(batch_cmd);
    add_backend_flags(batch_cmd);

    // analyze failures|prevalence
    auto* analyze = app.add_subcommand("analyze", "compute trace analytics CSVs");
    analyze->require_subcommand(1);
    std::string traces_path, strategy_filter, group_by = "topic";
    int top_k = 3;
    auto* failures = analyze->add_subcommand("failures", "failure counts per iteration");
    failures->add_option("--traces", traces_path, "traces JSONL file")->required();
    failures->add_option("--strategy", strategy_filter, "only traces of this strategy");
    failures->add_option("--out", out_path, "write CSV here instead of stdout");
    auto* prevalence_cmd =
        analyze->add_subcommand("prevalence", "failure prevalence by topic or unit");
    prevalence_cmd->add_option("--traces", traces_path, "traces JSONL file")->required();
    prevalence_cmd->add_option("--group-by", group_by, "topic|unit")
        ->check(CLI::IsMember({"topic", "unit"}));
    prevalence_cmd->add_option("--top", top_k, "groups per failure type")
        ->check(CLI::PositiveNumber);
    prevalence_cmd->add_option("--problems", problems_path,
                               "problems JSONL (for curriculum units)");
    prevalence_cmd->add_option("--strategy", strategy_filter, "only traces of this strategy");
    prevalence_cmd->add_option("--out", out_path, "write CSV here instead of stdout");

    // agree
    auto* agree = app.add_subcommand("agree", "human-vs-validator agreement table");
    std::string labels_path, criterion_filter;
    agree->add_option("--labels", labels_path, "labels CSV file")->required();
    agree->add_option("--criterion", criterion_filter,
                      "solvability|realism|readability|authenticity");

    // readability
    auto* readability_cmd = app.add_subcommand("readability", "Flesch-Kincaid grade of a text");
    std::string fk_text, fk_file;
    readability_cmd->add_option("--text", fk_text, "text to score");
    readability_cmd->add_option("--file", fk_file, "file whose contents to score");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (personalize->parsed() || batch_cmd->parsed())
            strategy.strategy = strategy_from_name(strategy_flag);
        if (personalize->parsed()) {
            return cmd_personalize(problems_path, problem_id, inline_text, inline_answer,
                                   topic_name, strategy, backend_options, prompts_dir,
                                   agent_options, out_path);
        }
        if (batch_cmd->parsed()) {
            batch.strategy = strategy;
            batch.output = out_path;
            batch.pairing = pairing_flag == "cross" ? PairingMode::CrossProduct
                                                    : PairingMode::RoundRobin;
            batch.agent_options = agent_options;
            return cmd_batch(problems_path, topics_path, std::move(batch), backend_options,
                             prompts_dir);
        }
        if (failures->parsed())
            return cmd_analyze_failures(traces_path, strategy_filter, out_path);
        if (prevalence_cmd->parsed())
            return cmd_analyze_prevalence(traces_path, group_by, top_k, problems_path,
                                          strategy_filter, out_path);
        if (agree->parsed()) return cmd_agree(labels_path, criterion_filter);
        if (readability_cmd->parsed()) return cmd_readability(fk_text, fk_file);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
