#include "refinery/analytics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace refinery {

FailureCurve failure_curve(std::span<const RunTrace> traces) {
    if (traces.empty()) throw Error(ErrorKind::EmptyInput, "no traces");

    FailureCurve curve;
    curve.strategy = traces.front().strategy;
    for (const RunTrace& trace : traces) {
        if (trace.strategy != curve.strategy)
            throw Error(ErrorKind::MixedStrategy,
                        "traces mix strategies '" +
                            std::string(strategy_name(curve.strategy)) + "' and '" +
                            strategy_name(trace.strategy) + "'");
        for (const IterationRecord& record : trace.iterations) {
            if (record.iteration >= static_cast<int>(curve.counts.size()))
                curve.counts.resize(record.iteration + 1, {});
            for (const ValidatorVerdict& v : record.verdicts) {
                if (!v.pass) ++curve.counts[record.iteration][static_cast<int>(v.criterion)];
            }
        }
    }
    return curve;
}

std::vector<PrevalenceRow> prevalence(
    std::span<const RunTrace> traces, GroupBy group_by, int top_k,
    const std::map<std::string, std::string>* unit_by_problem) {
    if (top_k < 1) throw Error(ErrorKind::Precondition, "top_k must be >= 1");
    if (group_by == GroupBy::CurriculumUnit && unit_by_problem == nullptr)
        throw Error(ErrorKind::Precondition,
                    "curriculum-unit grouping needs a problem_id -> unit map");

    struct GroupStats {
        int failed_attempts = 0;
        std::array<int, kCriterionCount> by_type{};
    };
    std::map<std::string, GroupStats> groups;

    for (const RunTrace& trace : traces) {
        if (trace.iterations.empty()) continue;
        const IterationRecord& zero_shot = trace.iterations.front();
        std::array<bool, kCriterionCount> failed{};
        bool any = false;
        for (const ValidatorVerdict& v : zero_shot.verdicts) {
            if (!v.pass) {
                failed[static_cast<int>(v.criterion)] = true;
                any = true;
            }
        }
        if (!any) continue;

        std::string group;
        if (group_by == GroupBy::Topic) {
            group = trace.topic;
        } else {
            const auto it = unit_by_problem->find(trace.problem_id);
            if (it == unit_by_problem->end())
                throw Error(ErrorKind::ParseError,
                            "no curriculum unit known for problem '" + trace.problem_id + "'");
            group = it->second;
        }
        GroupStats& stats = groups[group];
        ++stats.failed_attempts;
        for (int c = 0; c < kCriterionCount; ++c) {
            if (failed[c]) ++stats.by_type[c];
        }
    }

    std::vector<PrevalenceRow> rows;
    for (Criterion criterion : criterion_priority_order()) {
        std::vector<PrevalenceRow> of_type;
        for (const auto& [group, stats] : groups) {
            const int hits = stats.by_type[static_cast<int>(criterion)];
            if (hits == 0) continue;
            of_type.push_back({criterion, group,
                               static_cast<double>(hits) / stats.failed_attempts,
                               stats.failed_attempts});
        }
        std::sort(of_type.begin(), of_type.end(),
                  [](const PrevalenceRow& a, const PrevalenceRow& b) {
                      if (a.prevalence != b.prevalence) return a.prevalence > b.prevalence;
                      if (a.support != b.support) return a.support > b.support;
                      return a.group < b.group;
                  });
        if (static_cast<int>(of_type.size()) > top_k) of_type.resize(top_k);
        rows.insert(rows.end(), of_type.begin(), of_type.end());
    }
    return rows;
}

bool majority_label(std::span<const bool> labels) {
    if (labels.size() != 3)
        throw Error(ErrorKind::WrongArity,
                    "expected 3 labels, got " + std::to_string(labels.size()));
    const int passes = static_cast<int>(labels[0]) + labels[1] + labels[2];
    return passes >= 2;
}

double cohen_kappa(const std::vector<bool>& a, const std::vector<bool>& b) {
    if (a.size() != b.size())
        throw Error(ErrorKind::LengthMismatch,
                    std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                        " labels");
    if (a.empty()) throw Error(ErrorKind::EmptyInput, "no labels");

    const double n = static_cast<double>(a.size());
    int agree = 0, a_pass = 0, b_pass = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) ++agree;
        if (a[i]) ++a_pass;
        if (b[i]) ++b_pass;
    }
    const double po = agree / n;
    const double pa = a_pass / n, pb = b_pass / n;
    const double pe = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;
    return (po - pe) / (1.0 - pe);
}

double fleiss_kappa(std::span<const std::array<int, 2>> items) {
    if (items.empty()) throw Error(ErrorKind::EmptyInput, "no items");

    const double n_raters = 3.0;
    double p_bar = 0.0;
    double pass_total = 0.0, label_total = 0.0;
    for (const auto& [passes, fails] : items) {
        if (passes < 0 || fails < 0 || passes + fails != 3)
            throw Error(ErrorKind::WrongArity, "each item needs exactly 3 ratings");
        p_bar += (passes * passes + fails * fails - n_raters) / (n_raters * (n_raters - 1.0));
        pass_total += passes;
        label_total += n_raters;
    }
    p_bar /= static_cast<double>(items.size());
    const double p_pass = pass_total / label_total;
    const double p_fail = 1.0 - p_pass;
    const double pe_bar = p_pass * p_pass + p_fail * p_fail;
    if (pe_bar >= 1.0) return p_bar >= 1.0 ? 1.0 : 0.0;
    return (p_bar - pe_bar) / (1.0 - pe_bar);
}

AnnotationSet load_labels_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open labels file " + path.string());

    const auto split = [](const std::string& line) {
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ss(line);
        while (std::getline(ss, field, ',')) {
            while (!field.empty() && (field.back() == '\r' || field.back() == ' '))
                field.pop_back();
            fields.push_back(field);
        }
        return fields;
    };
    const auto parse_label = [&](const std::string& value, int row,
                                 const std::string& column) {
        if (value == "pass") return true;
        if (value == "fail") return false;
        throw Error(ErrorKind::ParseError,
                    path.string() + " row " + std::to_string(row) + ": column '" + column +
                        "' must be pass or fail, got '" + value + "'");
    };

    std::string line;
    if (!std::getline(in, line))
        throw Error(ErrorKind::ParseError, path.string() + ": empty file");
    const std::vector<std::string> header = split(line);
    const std::vector<std::string> expected{"problem_id", "criterion", "ann1",
                                            "ann2",       "ann3",      "model"};
    for (const std::string& column : expected) {
        if (std::find(header.begin(), header.end(), column) == header.end())
            throw Error(ErrorKind::ParseError,
                        path.string() + ": missing column '" + column + "'");
    }
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < header.size(); ++i) index[header[i]] = i;

    AnnotationSet set;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::vector<std::string> fields = split(line);
        if (fields.size() < header.size())
            throw Error(ErrorKind::ParseError,
                        path.string() + " row " + std::to_string(row) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        AnnotationItem item;
        item.problem_id = fields[index["problem_id"]];
        item.criterion = criterion_from_name(fields[index["criterion"]]);
        item.labels = {parse_label(fields[index["ann1"]], row, "ann1"),
                       parse_label(fields[index["ann2"]], row, "ann2"),
                       parse_label(fields[index["ann3"]], row, "ann3")};
        item.model_label = parse_label(fields[index["model"]], row, "model");
        set.items.push_back(std::move(item));
    }
    return set;
}

AgreementReport agreement_report(const AnnotationSet& annotations, Criterion criterion) {
    std::vector<bool> majority, model;
    std::vector<std::array<int, 2>> counts;
    for (const AnnotationItem& item : annotations.items) {
        if (item.criterion != criterion) continue;
        majority.push_back(majority_label(item.labels));
        model.push_back(item.model_label);
        const int passes =
            static_cast<int>(item.labels[0]) + item.labels[1] + item.labels[2];
        counts.push_back({passes, 3 - passes});
    }
    if (majority.empty())
        throw Error(ErrorKind::EmptyInput,
                    std::string("no items for criterion ") + criterion_name(criterion));

    AgreementReport report;
    report.criterion = criterion;
    report.n = static_cast<int>(majority.size());
    int matches = 0, majority_passes = 0;
    for (std::size_t i = 0; i < majority.size(); ++i) {
        if (majority[i] == model[i]) ++matches;
        if (majority[i]) ++majority_passes;
    }
    report.accuracy_vs_model = static_cast<double>(matches) / report.n;
    report.cohen_kappa_vs_model = cohen_kappa(majority, model);
    report.fleiss_kappa = fleiss_kappa(counts);
    const int minority = std::min(majority_passes, report.n - majority_passes);
    report.skewed = minority < 0.1 * report.n;
    return report;
}

void write_failure_curve_csv(std::ostream& out, const FailureCurve& curve) {
    out << "iteration,solvability,realism,readability,authenticity\n";
    for (std::size_t i = 0; i < curve.counts.size(); ++i) {
        const auto& row = curve.counts[i];
        out << i << ',' << row[static_cast<int>(Criterion::Solvability)] << ','
            << row[static_cast<int>(Criterion::Realism)] << ','
            << row[static_cast<int>(Criterion::Readability)] << ','
            << row[static_cast<int>(Criterion::Authenticity)] << '\n';
    }
}

void write_prevalence_csv(std::ostream& out, std::span<const PrevalenceRow> rows) {
    out << "failure_type,group,prevalence,support\n";
    for (const PrevalenceRow& row : rows) {
        std::ostringstream value;
        value << row.prevalence;
        out << criterion_name(row.failure_type) << ',' << row.group << ','
            << value.str() << ',' << row.support << '\n';
    }
}

void write_agreement_table(std::ostream& out, std::span<const AgreementReport> reports) {
    out << "criterion,n,fleiss_kappa,accuracy,cohen_kappa\n";
    char buf[128];
    for (const AgreementReport& report : reports) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%.3f,%.3f,%.3f",
                      criterion_name(report.criterion), report.n, report.fleiss_kappa,
                      report.accuracy_vs_model, report.cohen_kappa_vs_model);
        out << buf << '\n';
        if (report.skewed)
            out << "# warning: " << criterion_name(report.criterion)
                << " labels are highly skewed (one class under 10% of items); "
                   "agreement estimates are less informative\n";
    }
}

} // namespace refinery
