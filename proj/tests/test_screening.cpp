#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "retest/screening.hpp"

using namespace retest;
using namespace retest::screening;

namespace {

ingest::ReplicateMatrix make_matrix(int S, int k, MetricKind kind = MetricKind::continuous) {
    ingest::ReplicateMatrix m;
    m.model_id = "m1";
    m.spec.metric_id = "metric";
    m.spec.kind = kind;
    if (kind == MetricKind::binary) m.spec.allowed_labels = {"0", "1"};
    for (int s = 0; s < S; ++s) m.segment_ids.push_back("s" + std::to_string(s));
    for (int r = 0; r < k; ++r) m.run_ids.push_back("r" + std::to_string(r));
    m.grid.assign(size_t(S) * k, {});
    return m;
}

void set_number(ingest::ReplicateMatrix& m, int s, int r, double value) {
    auto& entry = m.at(s, r);
    entry.status = CellStatus::valid;
    entry.value = MetricValue::number(value);
    ++m.n_cells_present;
}

void set_label(ingest::ReplicateMatrix& m, int s, int r, const std::string& label) {
    auto& entry = m.at(s, r);
    entry.status = CellStatus::valid;
    entry.value = MetricValue::label(m.spec.kind, label);
    ++m.n_cells_present;
}

}  // namespace

TEST_CASE("constant feature has prevalence one and is screened") {
    auto m = make_matrix(6, 2);
    for (int s = 0; s < 6; ++s)
        for (int r = 0; r < 2; ++r) set_number(m, s, r, 1.0);
    m.recompute_completeness();

    CHECK(*dominant_category_prevalence(m) == doctest::Approx(1.0));
    ThresholdConfig cfg;
    CHECK(screen_metric(m, cfg).decision == Decision::screened_low_variance);
}

TEST_CASE("prevalence 0.99 exactly is screened (inclusive cutoff)") {
    auto m = make_matrix(25, 4, MetricKind::binary);  // 100 cells
    int count = 0;
    for (int s = 0; s < 25; ++s)
        for (int r = 0; r < 4; ++r) set_label(m, s, r, ++count <= 99 ? "0" : "1");
    m.recompute_completeness();

    CHECK(*dominant_category_prevalence(m) == doctest::Approx(0.99));
    ThresholdConfig cfg;
    CHECK(screen_metric(m, cfg).decision == Decision::screened_low_variance);
}

TEST_CASE("balanced binary is kept") {
    auto m = make_matrix(10, 2, MetricKind::binary);
    for (int s = 0; s < 10; ++s)
        for (int r = 0; r < 2; ++r) set_label(m, s, r, s % 2 ? "0" : "1");
    m.recompute_completeness();

    CHECK(*dominant_category_prevalence(m) == doctest::Approx(0.5));
    ThresholdConfig cfg;
    auto decision = screen_metric(m, cfg);
    CHECK(decision.decision == Decision::kept);
    CHECK(decision.n_complete_segments == 10);
}

TEST_CASE("zero valid cells is a not-calculated signal") {
    auto m = make_matrix(4, 2);
    m.recompute_completeness();
    CHECK_FALSE(dominant_category_prevalence(m).has_value());

    ThresholdConfig cfg;
    auto decision = screen_metric(m, cfg);
    CHECK(decision.decision == Decision::not_calculated);
    CHECK_FALSE(decision.prevalence.has_value());
}

TEST_CASE("too few complete segments screens for insufficient n") {
    auto m = make_matrix(3, 2);
    for (int s = 0; s < 3; ++s)
        for (int r = 0; r < 2; ++r) set_number(m, s, r, s + r * 0.1);
    m.recompute_completeness();

    ThresholdConfig cfg;  // min_segments = 5
    CHECK(screen_metric(m, cfg).decision == Decision::screened_insufficient_n);
}

TEST_CASE("precedence: insufficient n beats low variance") {
    auto m = make_matrix(3, 2);
    for (int s = 0; s < 3; ++s)
        for (int r = 0; r < 2; ++r) set_number(m, s, r, 7.0);  // constant too
    m.recompute_completeness();
    ThresholdConfig cfg;
    CHECK(screen_metric(m, cfg).decision == Decision::screened_insufficient_n);
}

TEST_CASE("prevalence uses all valid cells, not only complete segments") {
    auto m = make_matrix(6, 2);
    for (int s = 0; s < 5; ++s)
        for (int r = 0; r < 2; ++r) set_number(m, s, r, 1.0);
    set_number(m, 5, 0, 2.0);  // run 1 missing: segment incomplete
    m.recompute_completeness();

    CHECK(m.n_complete() == 5);
    CHECK(*dominant_category_prevalence(m) == doctest::Approx(10.0 / 11.0));
}

TEST_CASE("prevalence bounds hold on random matrices") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const int S = 2 + int(rng() % 8);
        const int k = 2 + int(rng() % 3);
        const int n_distinct = 1 + int(rng() % 4);
        auto m = make_matrix(S, k);
        int seen_distinct = 0;
        std::vector<bool> used(n_distinct, false);
        for (int s = 0; s < S; ++s) {
            for (int r = 0; r < k; ++r) {
                int v = int(rng() % n_distinct);
                if (!used[v]) {
                    used[v] = true;
                    ++seen_distinct;
                }
                set_number(m, s, r, double(v));
            }
        }
        m.recompute_completeness();
        const double p = *dominant_category_prevalence(m);
        CHECK(p >= 1.0 / double(seen_distinct) - 1e-12);
        CHECK(p <= 1.0 + 1e-12);
    }
}

TEST_CASE("screening is per (model, metric) and carries identifiers") {
    auto m = make_matrix(6, 2);
    for (int s = 0; s < 6; ++s)
        for (int r = 0; r < 2; ++r) set_number(m, s, r, double(s));
    m.recompute_completeness();
    m.model_id = "gemini";
    m.spec.metric_id = "speech_rate";
    ThresholdConfig cfg;
    auto decision = screen_metric(m, cfg);
    CHECK(decision.model_id == "gemini");
    CHECK(decision.metric_id == "speech_rate");
    CHECK(decision.decision == Decision::kept);
}
