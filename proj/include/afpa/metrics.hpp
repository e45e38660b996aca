#pragma once

// ROC-based detection metrics and per-machine reporting.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace afpa::metrics {

enum class Label { Normal, Anomalous };

std::string label_name(Label label);
Label parse_label(const std::string& text);

struct ScoreRecord {
    std::string clip_id;
    std::string machine_type;
    std::string machine_id;
    Label label = Label::Normal;
    double score = 0.0;  // higher = more anomalous

    bool operator==(const ScoreRecord&) const = default;
};

// Mann-Whitney AUC: fraction of (anomalous, normal) pairs ranked correctly,
// ties counted as one half. Throws ContractError when either class is empty.
double auc(std::span<const ScoreRecord> records);

// Standardized partial AUC: ROC area over FPR in [0, max_fpr], divided by
// max_fpr. The ROC is piecewise linear over grouped thresholds.
double pauc(std::span<const ScoreRecord> records, double max_fpr = 0.1);

struct MetricCell {
    std::string machine_type;
    std::string machine_id;
    std::optional<double> auc;
    std::optional<double> pauc;
    std::string note;  // why the cell is undefined, if it is
};

struct TypeSummary {
    std::string machine_type;
    double auc = 0.0;
    double pauc = 0.0;
    std::size_t ids = 0;
};

struct MetricReport {
    std::vector<MetricCell> cells;
    std::vector<TypeSummary> types;
    std::optional<double> average_auc;
    std::optional<double> average_pauc;
};

// Hierarchical means: IDs within a type, then types. Undefined cells are
// kept in `cells` but excluded from every mean.
MetricReport aggregate(std::vector<MetricCell> cells);
MetricReport report(std::span<const ScoreRecord> records, double max_fpr = 0.1);

std::string report_csv(const MetricReport& r);
std::string report_table(const MetricReport& r);

inline constexpr const char* kScoreCsvHeader = "clip_id,machine_type,machine_id,label,score";

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRecord> records);
std::vector<ScoreRecord> read_scores_csv(const std::filesystem::path& path);

}  // namespace afpa::metrics
