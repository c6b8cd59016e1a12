#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "refinery/core.hpp"

namespace refinery {

// Fail-verdict counts per iteration index, per criterion. Iteration indices
// are contiguous from 0 up to the deepest record seen in any trace.
struct FailureCurve {
    Strategy strategy = Strategy::Centralized;
    std::vector<std::array<int, kCriterionCount>> counts; // [iteration][criterion]
};

// Throws MixedStrategy when traces disagree on strategy, EmptyInput when none.
FailureCurve failure_curve(std::span<const RunTrace> traces);

enum class GroupBy {
    Topic,
    CurriculumUnit,
};

struct PrevalenceRow {
    Criterion failure_type = Criterion::Solvability;
    std::string group;
    double prevalence = 0.0; // failed attempts in group showing this type / failed attempts in group
    int support = 0;         // failed attempts in group
};

// A failed attempt is a trace whose iteration-0 validation has >= 1 failure.
// Returns, per failure type, the top_k groups by prevalence (ties: larger
// support, then lexicographic group name). Grouping by curriculum unit
// requires a problem_id -> unit map, since traces carry only problem ids.
std::vector<PrevalenceRow> prevalence(
    std::span<const RunTrace> traces, GroupBy group_by, int top_k,
    const std::map<std::string, std::string>* unit_by_problem = nullptr);

// Majority over exactly 3 binary labels (no ties possible).
bool majority_label(std::span<const bool> labels);

// Chance-corrected agreement between two equal-length binary label lists.
// Degenerate expected agreement of 1 yields 1.0 on perfect agreement else 0.0.
double cohen_kappa(const std::vector<bool>& a, const std::vector<bool>& b);

// Per-item (pass_count, fail_count) pairs over exactly 3 raters.
double fleiss_kappa(std::span<const std::array<int, 2>> items);

struct AnnotationItem {
    std::string problem_id;
    Criterion criterion = Criterion::Solvability;
    std::array<bool, 3> labels{}; // three human annotators, true = pass
    bool model_label = false;
};

struct AnnotationSet {
    std::vector<AnnotationItem> items;
};

// CSV with header problem_id,criterion,ann1,ann2,ann3,model and "pass"/"fail"
// labels. Throws ParseError with the offending row number.
AnnotationSet load_labels_csv(const std::filesystem::path& path);

struct AgreementReport {
    Criterion criterion = Criterion::Solvability;
    int n = 0;
    double fleiss_kappa = 0.0;
    double accuracy_vs_model = 0.0;   // majority-vs-model match rate
    double cohen_kappa_vs_model = 0.0;
    bool skewed = false; // one majority-label class below 10% of items
};

AgreementReport agreement_report(const AnnotationSet& annotations, Criterion criterion);

// CSV header: iteration,solvability,realism,readability,authenticity
void write_failure_curve_csv(std::ostream& out, const FailureCurve& curve);
// CSV header: failure_type,group,prevalence,support
void write_prevalence_csv(std::ostream& out, std::span<const PrevalenceRow> rows);
// Table-2-style columns: criterion,n,fleiss_kappa,accuracy,cohen_kappa
// (kappas and accuracy rendered to 3 decimals).
void write_agreement_table(std::ostream& out, std::span<const AgreementReport> reports);

} // namespace refinery
