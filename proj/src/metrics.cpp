#include "afpa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "afpa/error.hpp"

namespace afpa::metrics {

namespace {

// Score groups in descending order with per-group label counts.
struct Group {
    double score;
    std::uint64_t normals = 0;
    std::uint64_t anomalies = 0;
};

std::vector<Group> grouped_descending(std::span<const ScoreRecord> records, std::uint64_t& n_normal,
                                      std::uint64_t& n_anomalous) {
    std::vector<std::pair<double, Label>> sorted;
    sorted.reserve(records.size());
    n_normal = n_anomalous = 0;
    for (const auto& r : records) {
        if (!std::isfinite(r.score)) throw NumericError("score of clip '" + r.clip_id + "' is not finite");
        sorted.emplace_back(r.score, r.label);
        (r.label == Label::Normal ? n_normal : n_anomalous) += 1;
    }
    if (n_normal == 0 || n_anomalous == 0) {
        throw ContractError("metric undefined: need both normal and anomalous records (got " +
                            std::to_string(n_normal) + " normal, " + std::to_string(n_anomalous) + " anomalous)");
    }
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<Group> groups;
    for (const auto& [score, label] : sorted) {
        if (groups.empty() || groups.back().score != score) groups.push_back({score});
        (label == Label::Normal ? groups.back().normals : groups.back().anomalies) += 1;
    }
    return groups;
}

std::string fmt(double v, const char* spec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::string label_name(Label label) { return label == Label::Normal ? "normal" : "anomalous"; }

Label parse_label(const std::string& text) {
    if (text == "normal") return Label::Normal;
    if (text == "anomalous") return Label::Anomalous;
    throw FormatError("unknown label '" + text + "'");
}

double auc(std::span<const ScoreRecord> records) {
    std::uint64_t n_normal = 0, n_anomalous = 0;
    const auto groups = grouped_descending(records, n_normal, n_anomalous);
    // Twice the Mann-Whitney U, accumulated as an integer so auc and
    // pauc(max_fpr = 1) reduce to the same quotient.
    std::uint64_t twice_u = 0;
    std::uint64_t normals_below = n_normal;
    for (const auto& g : groups) {
        normals_below -= g.normals;
        twice_u += g.anomalies * (2 * normals_below + g.normals);
    }
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_normal) * static_cast<double>(n_anomalous));
}

double pauc(std::span<const ScoreRecord> records, double max_fpr) {
    if (!(max_fpr > 0.0 && max_fpr <= 1.0)) throw ContractError("pauc: max_fpr must lie in (0, 1]");
    std::uint64_t n_normal = 0, n_anomalous = 0;
    const auto groups = grouped_descending(records, n_normal, n_anomalous);
    const double nn = static_cast<double>(n_normal), na = static_cast<double>(n_anomalous);

    // Whole trapezoids in integer units of 1 / (2 * nn * na).
    std::uint64_t twice_area = 0;
    std::uint64_t fp = 0, tp = 0;
    double partial = 0.0;
    for (const auto& g : groups) {
        const auto fp1 = fp + g.normals, tp1 = tp + g.anomalies;
        const double x0 = static_cast<double>(fp) / nn, x1 = static_cast<double>(fp1) / nn;
        if (x1 <= max_fpr) {
            twice_area += (fp1 - fp) * (tp + tp1);
        } else {
            if (x0 < max_fpr) {
                const double y0 = static_cast<double>(tp) / na, y1 = static_cast<double>(tp1) / na;
                const double yp = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0);
                partial = (max_fpr - x0) * (y0 + yp) / 2.0;
            }
            break;
        }
        fp = fp1;
        tp = tp1;
    }
    const double area = static_cast<double>(twice_area) / (2.0 * nn * na) + partial;
    return max_fpr == 1.0 ? area : area / max_fpr;
}

MetricReport aggregate(std::vector<MetricCell> cells) {
    MetricReport r;
    std::map<std::string, TypeSummary> by_type;
    std::vector<std::string> type_order;
    for (const auto& c : cells) {
        if (!by_type.count(c.machine_type)) {
            by_type[c.machine_type] = TypeSummary{c.machine_type};
            type_order.push_back(c.machine_type);
        }
        if (!c.auc || !c.pauc) continue;
        auto& t = by_type[c.machine_type];
        t.auc += *c.auc;
        t.pauc += *c.pauc;
        t.ids += 1;
    }
    double sum_auc = 0.0, sum_pauc = 0.0;
    std::size_t defined_types = 0;
    for (const auto& name : type_order) {
        auto t = by_type[name];
        if (t.ids == 0) continue;
        t.auc /= static_cast<double>(t.ids);
        t.pauc /= static_cast<double>(t.ids);
        sum_auc += t.auc;
        sum_pauc += t.pauc;
        ++defined_types;
        r.types.push_back(t);
    }
    if (defined_types > 0) {
        r.average_auc = sum_auc / static_cast<double>(defined_types);
        r.average_pauc = sum_pauc / static_cast<double>(defined_types);
    }
    r.cells = std::move(cells);
    return r;
}

MetricReport report(std::span<const ScoreRecord> records, double max_fpr) {
    std::map<std::pair<std::string, std::string>, std::vector<ScoreRecord>> groups;
    for (const auto& rec : records) groups[{rec.machine_type, rec.machine_id}].push_back(rec);
    std::vector<MetricCell> cells;
    for (const auto& [key, recs] : groups) {
        MetricCell cell{key.first, key.second, std::nullopt, std::nullopt, ""};
        const bool has_normal = std::any_of(recs.begin(), recs.end(), [](auto& r) { return r.label == Label::Normal; });
        const bool has_anomalous =
            std::any_of(recs.begin(), recs.end(), [](auto& r) { return r.label == Label::Anomalous; });
        if (has_normal && has_anomalous) {
            cell.auc = auc(recs);
            cell.pauc = pauc(recs, max_fpr);
        } else {
            cell.note = has_normal ? "undefined: no anomalous clips" : "undefined: no normal clips";
        }
        cells.push_back(std::move(cell));
    }
    return aggregate(std::move(cells));
}

std::string report_csv(const MetricReport& r) {
    std::ostringstream os;
    os << "machine_type,machine_id,auc,pauc,status\n";
    for (const auto& c : r.cells) {
        os << c.machine_type << ',' << c.machine_id << ',';
        if (c.auc && c.pauc) {
            os << fmt(*c.auc, "%.6f") << ',' << fmt(*c.pauc, "%.6f") << ",ok\n";
        } else {
            os << ",," << c.note << '\n';
        }
    }
    for (const auto& t : r.types) {
        os << t.machine_type << ",mean," << fmt(t.auc, "%.6f") << ',' << fmt(t.pauc, "%.6f") << ",ok\n";
    }
    if (r.average_auc) {
        os << "average,," << fmt(*r.average_auc, "%.6f") << ',' << fmt(*r.average_pauc, "%.6f") << ",ok\n";
    } else {
        os << "average,,,,undefined: no defined cells\n";
    }
    return os.str();
}

std::string report_table(const MetricReport& r) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %-12s %9s %9s\n", "machine_type", "machine_id", "AUC(%)", "pAUC(%)");
    os << line;
    for (const auto& c : r.cells) {
        if (c.auc && c.pauc) {
            std::snprintf(line, sizeof line, "%-16s %-12s %9.2f %9.2f\n", c.machine_type.c_str(),
                          c.machine_id.c_str(), 100.0 * *c.auc, 100.0 * *c.pauc);
        } else {
            std::snprintf(line, sizeof line, "%-16s %-12s %9s %9s  [%s]\n", c.machine_type.c_str(),
                          c.machine_id.c_str(), "-", "-", c.note.c_str());
        }
        os << line;
    }
    for (const auto& t : r.types) {
        std::snprintf(line, sizeof line, "%-16s %-12s %9.2f %9.2f\n", t.machine_type.c_str(), "mean",
                      100.0 * t.auc, 100.0 * t.pauc);
        os << line;
    }
    if (r.average_auc) {
        std::snprintf(line, sizeof line, "%-16s %-12s %9.2f %9.2f\n", "Average", "", 100.0 * *r.average_auc,
                      100.0 * *r.average_pauc);
        os << line;
    }
    return os.str();
}

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRecord> records) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot create " + path.string());
    f << kScoreCsvHeader << '\n';
    for (const auto& r : records) {
        f << r.clip_id << ',' << r.machine_type << ',' << r.machine_id << ',' << label_name(r.label) << ','
          << fmt(r.score, "%.17g") << '\n';
    }
    if (!f) throw IoError("write failed for " + path.string());
}

std::vector<ScoreRecord> read_scores_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != kScoreCsvHeader) {
        throw FormatError(path.string() + ": expected header '" + kScoreCsvHeader + "'");
    }
    std::vector<ScoreRecord> out;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 5) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
        }
        ScoreRecord r{fields[0], fields[1], fields[2], parse_label(fields[3]), 0.0};
        char* end = nullptr;
        r.score = std::strtod(fields[4].c_str(), &end);
        if (end == fields[4].c_str() || *end != '\0') {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad score '" + fields[4] + "'");
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace afpa::metrics
