#include "refinery/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "refinery/orchestrator.hpp"
#include "refinery/readability.hpp"

namespace refinery {

namespace {

std::string utc_timestamp() {
    const std::time_t now =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string pair_key(const std::string& problem_id, const std::string& topic,
                     const std::string& strategy) {
    return problem_id + "\x1f" + topic + "\x1f" + strategy;
}

} // namespace

std::vector<MathProblem> load_problems(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open problems file " + path.string());

    std::vector<MathProblem> problems;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ParseError, where + ": invalid JSON: " + e.what());
        }
        MathProblem p;
        try {
            p.id = j.at("id").get<std::string>();
            p.text = j.at("text").get<std::string>();
            p.answer = j.at("answer").get<std::string>();
            if (j.contains("choices"))
                p.choices = j.at("choices").get<std::vector<std::string>>();
            p.curriculum_unit = j.value("curriculum_unit", "");
            if (j.contains("grade_level")) p.grade_level = j.at("grade_level").get<double>();
            else p.grade_level = fk_grade_of_text(p.text);
            validate_problem(p);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ParseError, where + ": " + e.what());
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::DuplicateId) throw;
            throw Error(ErrorKind::ParseError, where + ": " + e.what());
        }
        if (!seen.insert(p.id).second)
            throw Error(ErrorKind::DuplicateId,
                        where + ": duplicate problem id '" + p.id + "'");
        problems.push_back(std::move(p));
    }
    return problems;
}

std::vector<Topic> load_topics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open topics file " + path.string());

    std::vector<Topic> topics;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
            line.pop_back();
        if (line.empty()) continue;
        Topic t;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            t.name = line;
        } else {
            t.name = line.substr(0, tab);
            const std::string category = line.substr(tab + 1);
            if (!category.empty()) t.category = category;
        }
        if (!seen.insert(t.name).second)
            throw Error(ErrorKind::DuplicateId,
                        path.string() + ":" + std::to_string(line_no) +
                            ": duplicate topic '" + t.name + "'");
        topics.push_back(std::move(t));
    }
    return topics;
}

std::vector<WorkItem> make_work_plan(const Dataset& dataset, PairingMode mode) {
    if (dataset.problems.empty() || dataset.topics.empty())
        throw Error(ErrorKind::EmptyInput, "dataset needs at least one problem and topic");

    std::vector<WorkItem> plan;
    if (mode == PairingMode::RoundRobin) {
        plan.reserve(dataset.problems.size());
        for (std::size_t i = 0; i < dataset.problems.size(); ++i) {
            plan.push_back({&dataset.problems[i],
                            &dataset.topics[i % dataset.topics.size()]});
        }
    } else {
        plan.reserve(dataset.problems.size() * dataset.topics.size());
        for (const auto& problem : dataset.problems) {
            for (const auto& topic : dataset.topics) {
                plan.push_back({&problem, &topic});
            }
        }
    }
    return plan;
}

BatchSummary run_batch(const Dataset& dataset, const BatchConfig& config,
                       Backend& backend, const PromptLibrary& prompts) {
    if (config.concurrency < 1)
        throw Error(ErrorKind::Precondition, "concurrency must be >= 1");

    std::vector<WorkItem> plan = make_work_plan(dataset, config.pairing);
    BatchSummary summary;

    // resume: skip pairs already recorded, whatever their status
    std::set<std::string> done;
    if (config.resume && std::filesystem::exists(config.output)) {
        std::ifstream in(config.output);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) continue;
            const auto text_field = [&](const char* key) -> std::string {
                return j.contains(key) && j[key].is_string() ? j[key].get<std::string>()
                                                             : std::string();
            };
            done.insert(pair_key(text_field("problem_id"), text_field("topic"),
                                 text_field("strategy")));
        }
    }
    const char* strategy = strategy_name(config.strategy.strategy);
    std::vector<WorkItem> pending;
    for (const WorkItem& item : plan) {
        if (done.count(pair_key(item.problem->id, item.topic->name, strategy))) {
            ++summary.skipped;
        } else {
            pending.push_back(item);
        }
    }

    std::ofstream out(config.output, std::ios::app);
    if (!out)
        throw Error(ErrorKind::IoError, "cannot open output file " + config.output.string());

    std::mutex out_mutex; // guards `out` and `summary`
    const auto append_line = [&](const nlohmann::json& j, int BatchSummary::*counter) {
        std::lock_guard lock(out_mutex);
        out << j.dump() << '\n';
        out.flush();
        ++(summary.*counter);
    };

    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= pending.size()) return;
            const WorkItem& item = pending[i];
            try {
                Agents agents(backend, prompts, config.agent_options);
                StrategyOutcome outcome =
                    run(*item.problem, *item.topic, config.strategy, agents);
                outcome.trace.created_at = utc_timestamp();
                append_line(nlohmann::json(outcome.trace),
                            outcome.trace.final_status == FinalStatus::PassedAll
                                ? &BatchSummary::passed
                                : &BatchSummary::exhausted);
            } catch (const std::exception& e) {
                const nlohmann::json stub{{"schema_version", kTraceSchemaVersion},
                                          {"problem_id", item.problem->id},
                                          {"topic", item.topic->name},
                                          {"strategy", strategy},
                                          {"final_status", "Errored"},
                                          {"error", e.what()},
                                          {"created_at", utc_timestamp()}};
                append_line(stub, &BatchSummary::errored);
            }
        }
    };

    const int workers =
        static_cast<int>(std::min<std::size_t>(config.concurrency, pending.size()));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(workers);
        for (int i = 0; i < workers; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    return summary;
}

TraceFile load_traces(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open traces file " + path.string());

    TraceFile file;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ParseError, where + ": invalid JSON: " + e.what());
        }
        if (j.contains("final_status") && j["final_status"].is_string() &&
            j["final_status"] == "Errored") {
            ++file.errored;
            continue;
        }
        try {
            file.traces.push_back(j.get<RunTrace>());
        } catch (const std::exception& e) {
            throw Error(ErrorKind::ParseError, where + ": " + e.what());
        }
    }
    return file;
}

} // namespace refinery
