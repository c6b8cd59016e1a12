#pragma once

#include <filesystem>
#include <vector>

#include "refinery/agents.hpp"
#include "refinery/core.hpp"
#include "refinery/gateway.hpp"

namespace refinery {

struct Dataset {
    std::vector<MathProblem> problems;
    std::vector<Topic> topics;
};

// JSONL, one problem per line: {"id", "text", "answer", "choices"?,
// "curriculum_unit", "grade_level"?}. A missing grade_level is computed from
// the text. Throws ParseError (with line number) or DuplicateId.
std::vector<MathProblem> load_problems(const std::filesystem::path& path);

// One topic per line, optionally "name<TAB>category"; blank lines skipped.
std::vector<Topic> load_topics(const std::filesystem::path& path);

enum class PairingMode {
    RoundRobin,   // problem i paired with topic (i mod |topics|)
    CrossProduct, // every problem with every topic
};

struct WorkItem {
    const MathProblem* problem = nullptr;
    const Topic* topic = nullptr;
};

std::vector<WorkItem> make_work_plan(const Dataset& dataset, PairingMode mode);

struct BatchConfig {
    StrategyConfig strategy;
    int concurrency = 1;
    std::filesystem::path output;
    bool resume = false;
    PairingMode pairing = PairingMode::RoundRobin;
    AgentOptions agent_options;
};

struct BatchSummary {
    int passed = 0;
    int exhausted = 0;
    int errored = 0;
    int skipped = 0;
};

// Runs every work-plan pair through the orchestrator with at most
// `concurrency` runs in flight. Each finished trace is appended to the output
// file as one JSON line and flushed before the run is acknowledged; failures
// become {"final_status":"Errored"} stub lines and the batch continues. With
// resume=true, pairs already present in the output (including errored ones)
// are skipped.
BatchSummary run_batch(const Dataset& dataset, const BatchConfig& config,
                       Backend& backend, const PromptLibrary& prompts);

struct TraceFile {
    std::vector<RunTrace> traces;
    int errored = 0; // stub lines skipped while loading
};

TraceFile load_traces(const std::filesystem::path& path);

} // namespace refinery
