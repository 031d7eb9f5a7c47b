#include <catch2/catch_amalgamated.hpp>

#include "selfcollage/evaluation.hpp"

#include "helpers.hpp"

using namespace selfcollage;

TEST_CASE("mae and rmse hand values") {
    REQUIRE(mae({2, 4}, {3, 3}) == Catch::Approx(1.0));
    REQUIRE(rmse({2, 4}, {3, 3}) == Catch::Approx(1.0));
    REQUIRE(mae({0, 4}, {0, 0}) == Catch::Approx(2.0));
    REQUIRE(rmse({0, 4}, {0, 0}) == Catch::Approx(2.0 * std::sqrt(2.0)));
    REQUIRE(mae({1, 1}, {1, 1}) == 0.0);
    REQUIRE_THROWS_AS(mae({}, {}), InvalidInput);
    REQUIRE_THROWS_AS(rmse({1.0}, {1.0, 2.0}), InvalidInput);
}

namespace {

// O(n^2) oracle with tie correction
double brute_force_tau(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    long long concordant = 0, discordant = 0, tx = 0, ty = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j], dy = y[i] - y[j];
            if (dx == 0 && dy == 0) {
                ++tx;
                ++ty;
            } else if (dx == 0) {
                ++tx;
            } else if (dy == 0) {
                ++ty;
            } else if ((dx > 0) == (dy > 0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    const long long n0 = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
    return static_cast<double>(concordant - discordant) /
           (std::sqrt(static_cast<double>(n0 - tx)) * std::sqrt(static_cast<double>(n0 - ty)));
}

}  // namespace

TEST_CASE("kendall tau endpoints and brute-force agreement") {
    REQUIRE(kendall_tau({1, 2, 3, 4}, {10, 20, 30, 40}) == Catch::Approx(1.0));
    REQUIRE(kendall_tau({1, 2, 3, 4}, {40, 30, 20, 10}) == Catch::Approx(-1.0));

    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x(30), y(30);
        for (auto& v : x) v = std::floor(rng.uniform(0, 10));  // discrete -> ties
        for (auto& v : y) v = std::floor(rng.uniform(0, 10));
        bool xconst = true, yconst = true;
        for (double v : x) xconst = xconst && v == x[0];
        for (double v : y) yconst = yconst && v == y[0];
        if (xconst || yconst) continue;
        REQUIRE(kendall_tau(x, y) == Catch::Approx(brute_force_tau(x, y)).margin(1e-12));
    }

    REQUIRE_THROWS_AS(kendall_tau({1, 1, 1}, {1, 2, 3}), UndefinedCorrelation);
    REQUIRE_THROWS_AS(kendall_tau({1, 2, 3}, {5, 5, 5}), UndefinedCorrelation);
    REQUIRE_THROWS_AS(kendall_tau({1.0}, {1.0}), InvalidInput);
}

TEST_CASE("kendall tau is invariant under strictly monotone transforms") {
    Rng rng(8);
    std::vector<double> x(25), y(25);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    const double base = kendall_tau(x, y);
    std::vector<double> tx = x;
    for (auto& v : tx) v = std::exp(3.0 * v) + 7.0;
    REQUIRE(kendall_tau(tx, y) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("split routing at the published boundaries") {
    const SplitBounds b;
    REQUIRE(split_of_count(8, b) == "low");
    REQUIRE(split_of_count(16, b) == "low");
    REQUIRE(split_of_count(17, b) == "medium");
    REQUIRE(split_of_count(40, b) == "medium");
    REQUIRE(split_of_count(41, b) == "high");
    REQUIRE(split_of_count(3701, b) == "high");
    REQUIRE(split_of_count(7, b) == "other");
    REQUIRE(split_of_count(3702, b) == "other");

    std::vector<EvalRecord> records;
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
        EvalRecord r;
        r.id = std::to_string(i);
        r.gt_count = static_cast<int>(rng.uniform_int(1, 100));
        records.push_back(r);
    }
    const SplitLists lists = split_by_count(records, b);
    REQUIRE(lists.low.size() + lists.medium.size() + lists.high.size() + lists.other.size() ==
            records.size());
}

TEST_CASE("average baseline") {
    REQUIRE(average_baseline({5, 5, 5}) == Catch::Approx(5.0));
    // integer counts averaging to the published training mean
    std::vector<double> counts(100, 0.0);
    for (int i = 0; i < 96; ++i) counts[static_cast<std::size_t>(i)] = 50;
    counts[96] = 46;
    counts[97] = 46;
    counts[98] = 52;
    counts[99] = 52;  // sum = 4996
    REQUIRE(average_baseline(counts) == Catch::Approx(49.96).margin(0.01));
    REQUIRE_THROWS_AS(average_baseline({}), InvalidInput);

    // constant-mean predictor is never better than the oracle predictor
    Rng rng(10);
    std::vector<double> truths(40);
    for (auto& v : truths) v = std::floor(rng.uniform(0, 60));
    const double mean = average_baseline(truths);
    const std::vector<double> const_preds(truths.size(), mean);
    REQUIRE(mae(const_preds, truths) >= mae(truths, truths));
}

TEST_CASE("connected components baseline counting") {
    // single solid blob retained by the one head
    ScalarMap att(8, 8, 0.0);
    for (int y = 2; y < 5; ++y)
        for (int x = 2; x < 5; ++x) att.at(y, x) = 1.0;
    CCConfig cfg;
    cfg.p_att = 0.99;
    cfg.n_head = 1;
    cfg.p_size = 0.0;
    REQUIRE(connected_components_count({att}, cfg) == 1);

    // three disjoint blobs; oracle = recursive flood fill
    ScalarMap three(10, 12, 0.0);
    auto blob = [&](int y0, int x0, int s) {
        for (int y = y0; y < y0 + s; ++y)
            for (int x = x0; x < x0 + s; ++x) three.at(y, x) = 1.0;
    };
    blob(0, 0, 2);
    blob(5, 5, 3);
    blob(1, 8, 2);
    REQUIRE(connected_components_count({three}, cfg) == 3);

    // p_size filters small components (strictly-greater rule)
    cfg.p_size = 4.0 / (10.0 * 12.0);  // blobs of size 4 no longer count
    REQUIRE(connected_components_count({three}, cfg) == 1);

    // mass-fraction thresholding is invariant to positive rescaling
    cfg.p_size = 0.0;
    cfg.p_att = 0.6;
    ScalarMap scaled = three;
    for (auto& v : scaled.v) v *= 37.5;
    REQUIRE(connected_components_count({three}, cfg) == connected_components_count({scaled}, cfg));

    // multi-head vote: patch must be retained by at least n_head heads
    ScalarMap a(4, 4, 0.0), b(4, 4, 0.0);
    a.at(0, 0) = 1.0;
    a.at(2, 2) = 1.0;
    b.at(2, 2) = 1.0;
    CCConfig vote;
    vote.p_att = 0.9;
    vote.n_head = 2;
    vote.p_size = 0.0;
    REQUIRE(connected_components_count({a, b}, vote) == 1);  // only (2,2) survives
}

TEST_CASE("cc grid search enumerates 792 configurations") {
    Rng rng(11);
    std::vector<std::vector<ScalarMap>> heads;
    std::vector<double> gts;
    for (int img = 0; img < 4; ++img) {
        std::vector<ScalarMap> hm;
        for (int h = 0; h < 12; ++h) {
            ScalarMap m(6, 6, 0.0);
            for (auto& v : m.v) v = rng.uniform();
            hm.push_back(std::move(m));
        }
        heads.push_back(std::move(hm));
        gts.push_back(std::floor(rng.uniform(1, 10)));
    }
    const CCGridResult result = grid_search_cc(heads, gts);
    REQUIRE(result.rows.size() == 792);
    // best is the minimum over the emitted table (oracle: re-scan)
    double min_mae = 1e300;
    for (const auto& row : result.rows) min_mae = std::min(min_mae, row.mae);
    REQUIRE(result.best_mae == Catch::Approx(min_mae));

    // degenerate single-config grid returns that config
    const CCGridResult single = grid_search_cc(heads, gts, 4, {0.7}, {10}, {0.0});
    REQUIRE(single.rows.size() == 1);
    REQUIRE(single.best.p_att == 0.7);
    REQUIRE(single.best.n_head == 10);
    REQUIRE(single.best.p_size == 0.0);
}

TEST_CASE("evaluate with oracle and constant predictors") {
    std::vector<EvalRecord> records;
    Rng rng(12);
    for (int i = 0; i < 30; ++i) {
        EvalRecord r;
        r.id = "img" + std::to_string(i);
        r.gt_count = static_cast<int>(rng.uniform_int(8, 80));
        records.push_back(r);
    }
    // oracle predictor reads the ground truth
    const EvalReport oracle = evaluate(
        [](const EvalRecord& r) -> std::optional<Prediction> {
            return Prediction{static_cast<double>(r.gt_count), "direct"};
        },
        records);
    REQUIRE(oracle.overall.n == 30);
    REQUIRE(*oracle.overall.mae == 0.0);
    REQUIRE(*oracle.overall.rmse == 0.0);
    REQUIRE(*oracle.overall.tau == Catch::Approx(1.0));

    // constant predictor on varied truths: correlation undefined -> reported null
    const EvalReport constant = evaluate(
        [](const EvalRecord&) -> std::optional<Prediction> { return Prediction{42.0, "direct"}; },
        records);
    REQUIRE_FALSE(constant.overall.tau.has_value());
    REQUIRE(constant.overall.mae.has_value());

    // report MAE equals a hand recomputation from the per-image rows
    const EvalReport noisy = evaluate(
        [&](const EvalRecord& r) -> std::optional<Prediction> {
            return Prediction{r.gt_count + (r.gt_count % 3) - 1.0, "direct"};
        },
        records);
    double hand = 0.0;
    for (const auto& row : noisy.rows) hand += std::abs(row.pred - row.gt);
    hand /= static_cast<double>(noisy.rows.size());
    REQUIRE(*noisy.overall.mae == Catch::Approx(hand).margin(1e-12));
    REQUIRE(*noisy.overall.rmse >= *noisy.overall.mae);

    // per-split metrics satisfy MAE <= RMSE whenever defined
    for (const SplitMetrics* m : {&noisy.low, &noisy.medium, &noisy.high, &noisy.other})
        if (m->mae) REQUIRE(*m->rmse >= *m->mae - 1e-12);

    // skipped records are excluded from n
    int calls = 0;
    const EvalReport skippy = evaluate(
        [&](const EvalRecord& r) -> std::optional<Prediction> {
            ++calls;
            if (r.id == "img3") throw IoError("unreadable");
            return Prediction{1.0, "direct"};
        },
        records);
    REQUIRE(calls == 30);
    REQUIRE(skippy.skipped == 1);
    REQUIRE(skippy.overall.n == 29);

    REQUIRE_THROWS_AS(
        evaluate([](const EvalRecord&) -> std::optional<Prediction> { return std::nullopt; }, {}),
        InvalidInput);
}

TEST_CASE("report writers emit JSON and CSV") {
    const auto dir = testutil::temp_dir("report");
    std::vector<EvalRecord> records(3);
    for (int i = 0; i < 3; ++i) {
        records[static_cast<std::size_t>(i)].id = "r" + std::to_string(i);
        records[static_cast<std::size_t>(i)].gt_count = 10 + i;
    }
    const EvalReport report = evaluate(
        [](const EvalRecord& r) -> std::optional<Prediction> {
            return Prediction{r.gt_count + 0.4, "direct"};
        },
        records);
    write_report_json(dir + "/report.json", report);
    write_report_csv(dir + "/report.csv", report);
    std::ifstream jf(dir + "/report.json");
    const nlohmann::json j = nlohmann::json::parse(jf);
    REQUIRE(j.at("overall").at("n").get<int>() == 3);
    REQUIRE(j.at("images").size() == 3);
    std::ifstream cf(dir + "/report.csv");
    std::string header;
    std::getline(cf, header);
    REQUIRE(header == "id,gt,pred,rounded,path,split");
    int lines = 0;
    std::string line;
    while (std::getline(cf, line))
        if (!line.empty()) ++lines;
    REQUIRE(lines == 3);
}
