#include <doctest.h>

#include <cmath>
#include <random>

#include "afpa/error.hpp"
#include "afpa/metrics.hpp"
#include "oracles.hpp"
#include "reference_results.hpp"
#include "support.hpp"

using namespace afpa;
using namespace afpa::metrics;

namespace {

std::vector<ScoreRecord> make(const std::vector<double>& normals, const std::vector<double>& anomalies,
                              const std::string& type = "fan", const std::string& id = "id_00") {
    std::vector<ScoreRecord> out;
    for (std::size_t i = 0; i < normals.size(); ++i)
        out.push_back({"n" + std::to_string(i), type, id, Label::Normal, normals[i]});
    for (std::size_t i = 0; i < anomalies.size(); ++i)
        out.push_back({"a" + std::to_string(i), type, id, Label::Anomalous, anomalies[i]});
    return out;
}

// Scores on a 0.01 grid so ties are common.
std::vector<ScoreRecord> random_set(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<int> q(0, 60);
    std::bernoulli_distribution coin(0.5);
    std::vector<ScoreRecord> r;
    for (std::size_t i = 0; i < n; ++i) {
        r.push_back({"c" + std::to_string(i), "t", "id", coin(rng) ? Label::Anomalous : Label::Normal, q(rng) * 0.01});
    }
    r[0].label = Label::Normal;
    r[1].label = Label::Anomalous;
    return r;
}

}  // namespace

TEST_CASE("auc examples") {
    CHECK(auc(make({0.1, 0.2}, {0.8, 0.9})) == 1.0);
    CHECK(auc(make({0.1, 0.7}, {0.5, 0.9})) == 0.75);
    CHECK(auc(make({0.3, 0.3, 0.3}, {0.3, 0.3})) == 0.5);
    CHECK_THROWS_AS(auc(make({0.1, 0.2}, {})), ContractError);
    CHECK_THROWS_AS(auc(make({NAN}, {1.0})), NumericError);
}

TEST_CASE("pauc examples") {
    const auto perfect = make({0.1, 0.2, 0.3}, {0.8, 0.9});
    for (double p : {0.05, 0.1, 0.5, 1.0}) CHECK(pauc(perfect, p) == 1.0);
    const auto mixed = make({0.1, 0.7, 0.4, 0.4}, {0.5, 0.9, 0.4});
    CHECK(pauc(mixed, 1.0) == auc(mixed));
    CHECK_THROWS_AS(pauc(mixed, 0.0), ContractError);
    CHECK_THROWS_AS(pauc(mixed, 1.5), ContractError);
}

TEST_CASE("pauc of 20 random scores matches a dense threshold sweep") {
    std::mt19937_64 rng(20);
    const auto r = random_set(rng, 20);
    CHECK(std::abs(pauc(r, 0.1) - oracle::pauc_threshold_grid(r, 0.1, 1'000'000)) < 1e-6);
    CHECK(std::abs(auc(r) - oracle::pauc_threshold_grid(r, 1.0, 1'000'000)) < 1e-6);
}

TEST_CASE("metrics agree with the pairwise and sweep oracles") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> size(2, 200);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto r = random_set(rng, size(rng));
        worst = std::max(worst, std::abs(auc(r) - oracle::auc(r)));
        worst = std::max(worst, std::abs(pauc(r, 0.1) - oracle::pauc_sweep(r, 0.1)));
        worst = std::max(worst, std::abs(pauc(r, 0.3) - oracle::pauc_sweep(r, 0.3)));
        CHECK(pauc(r, 0.1) <= 1.0);
        CHECK(pauc(r, 1.0) == auc(r));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("auc is invariant under monotone transforms and flips with labels") {
    std::mt19937_64 rng(9);
    std::vector<double> n = oracle::randu(30, rng), a = oracle::randu(25, rng, -0.5, 1.5);
    auto r = make(n, a);
    const double base = auc(r);
    auto t = r;
    for (auto& x : t) x.score = std::exp(3.0 * x.score) - 7.0;
    CHECK(auc(t) == doctest::Approx(base).epsilon(1e-15));
    auto f = r;
    for (auto& x : f) x.label = x.label == Label::Normal ? Label::Anomalous : Label::Normal;
    CHECK(auc(f) == doctest::Approx(1.0 - base).epsilon(1e-15));
}

TEST_CASE("report means") {
    auto r = make({0.1}, {0.9});
    auto rep = report(r);
    REQUIRE(rep.average_auc);
    CHECK(*rep.average_auc == 1.0);

    std::vector<MetricCell> cells{{"fan", "id_00", 0.8, 0.7, ""}, {"pump", "id_00", 0.9, 0.6, ""}};
    rep = aggregate(cells);
    CHECK(*rep.average_auc == doctest::Approx(0.85));
    CHECK(*rep.average_pauc == doctest::Approx(0.65));

    // ids are averaged inside a type before types are averaged
    cells = {{"fan", "id_00", 0.6, 0.5, ""}, {"fan", "id_02", 1.0, 0.5, ""}, {"pump", "id_00", 0.5, 0.5, ""}};
    rep = aggregate(cells);
    CHECK(*rep.average_auc == doctest::Approx(0.65));
}

TEST_CASE("undefined cells are flagged and excluded") {
    auto r = make({0.1, 0.2}, {0.9}, "fan", "id_00");
    auto only_normal = make({0.4}, {}, "fan", "id_02");
    r.insert(r.end(), only_normal.begin(), only_normal.end());
    const auto rep = report(r);
    REQUIRE(rep.cells.size() == 2);
    CHECK_FALSE(rep.cells[1].auc);
    CHECK(rep.cells[1].note.find("undefined") != std::string::npos);
    CHECK(*rep.average_auc == 1.0);
    CHECK(report_csv(rep).find("fan,id_02,,,undefined") != std::string::npos);
    CHECK(report_table(rep).find("undefined") != std::string::npos);

    const auto none = report(make({0.1}, {}, "fan", "id_00"));
    CHECK_FALSE(none.average_auc);
    CHECK(report_csv(none).find("average,,,,undefined") != std::string::npos);
}

TEST_CASE("reference per-type results reproduce the reference averages") {
    for (const auto* row : {&reference::kAfpa, &reference::kBackbone}) {
        std::vector<ScoreRecord> records;
        std::vector<MetricCell> cells;
        for (std::size_t i = 0; i < reference::kTypes.size(); ++i) {
            const auto type = std::string(reference::kTypes[i]);
            auto rec = reference::records_with_auc(row->auc[i], type);
            records.insert(records.end(), rec.begin(), rec.end());
            cells.push_back({type, "id_00", row->auc[i] / 100.0, row->pauc[i] / 100.0, ""});
        }
        const auto from_scores = report(records);
        CHECK(std::abs(100.0 * *from_scores.average_auc - row->average_auc) < 0.005);
        const auto from_cells = aggregate(cells);
        CHECK(std::abs(100.0 * *from_cells.average_auc - row->average_auc) < 0.005);
        CHECK(std::abs(100.0 * *from_cells.average_pauc - row->average_pauc) < 0.005);
    }
}

TEST_CASE("score csv round trip") {
    support::TempDir dir("metrics");
    std::mt19937_64 rng(1);
    auto r = make(oracle::randu(5, rng), oracle::randu(4, rng), "ToyCar", "id_01");
    r[2].score = 1.0 / 3.0;
    r[3].score = -1e-300;
    write_scores_csv(dir.path() / "s.csv", r);
    CHECK(read_scores_csv(dir.path() / "s.csv") == r);
    CHECK(support::read_text(dir.path() / "s.csv").rfind(std::string(kScoreCsvHeader) + "\n", 0) == 0);

    support::write_text(dir.path() / "bad.csv", "clip,score\n");
    CHECK_THROWS_AS(read_scores_csv(dir.path() / "bad.csv"), FormatError);
    support::write_text(dir.path() / "bad2.csv", std::string(kScoreCsvHeader) + "\na,fan,id_00,normal,zz\n");
    CHECK_THROWS_AS(read_scores_csv(dir.path() / "bad2.csv"), FormatError);
    support::write_text(dir.path() / "bad3.csv", std::string(kScoreCsvHeader) + "\na,fan,id_00,odd,1\n");
    CHECK_THROWS_AS(read_scores_csv(dir.path() / "bad3.csv"), FormatError);
    CHECK_THROWS_AS(read_scores_csv(dir.path() / "missing.csv"), IoError);
}
