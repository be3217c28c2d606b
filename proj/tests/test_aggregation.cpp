#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "permagg/aggregation.hpp"

using namespace permagg;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// hardsine viewed through the affine map of [-1,1] onto the unit interval,
// where the spline kernels live
TargetFunction mapped_hardsine() {
    TargetFunction raw = make_hardsine();
    return make_custom(
        [raw](const Point& u) { return eval_target(raw, 2.0 * u[0] - 1.0); },
        Point::Zero(1), Point::Ones(1));
}

std::vector<PermConfig> spline_grid(double h_lo, double h_hi, int count) {
    std::vector<PermConfig> grid;
    for (int i = 0; i < count; ++i) {
        PermConfig config;
        config.kernel = KernelSpec{KernelFamily::cubic_spline, 1, 1.0};
        config.h = h_lo * std::pow(h_hi / h_lo, static_cast<double>(i) / (count - 1));
        grid.push_back(config);
    }
    return grid;
}

Eigen::VectorXd risks3() {
    Eigen::VectorXd r(3);
    r << 0.5, 0.25, 1.25;
    return r;
}

}  // namespace

TEST_CASE("exponential weights: closed form, simplex, invariances") {
    Eigen::VectorXd two(2);
    two << 0.0, 1.0;
    WeightVector w = exp_weights(two, 1, 1.0);
    CHECK_THAT(w.weights[0], WithinAbs(0.7310585786300049, 1e-15));
    CHECK_THAT(w.weights[1], WithinAbs(0.2689414213699951, 1e-15));
    CHECK(w.temperature == 1.0);
    CHECK(w.n_learn == 1);

    // simplex on random inputs
    auto rng = make_rng(5);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (int rep = 0; rep < 100; ++rep) {
        Eigen::VectorXd risks(5);
        for (int i = 0; i < 5; ++i) risks[i] = u(rng);
        WeightVector wv = exp_weights(risks, 1 + rep % 40, 10.0 + rep);
        CHECK(wv.weights.minCoeff() >= 0.0);
        CHECK_THAT(wv.weights.sum(), WithinAbs(1.0, 1e-12));
        CHECK(argmax_weight(wv.weights) == erm_select(risks));
    }

    // dyadic risk shift leaves the weights bit-identical
    Eigen::VectorXd base(4);
    base << 0.25, 0.5, 1.0, 1.25;
    Eigen::VectorXd shifted = base.array() + 4.0;
    WeightVector wa = exp_weights(base, 30, 20.0);
    WeightVector wb = exp_weights(shifted, 30, 20.0);
    CHECK((wa.weights.array() == wb.weights.array()).all());
}

TEST_CASE("exponential weights: temperature limits and monotonicity") {
    Eigen::VectorXd risks = risks3();  // argmin 1, argmax 2

    double prev_best = 2.0, prev_worst = -1.0;
    for (double T : {1.0, 2.0, 5.0, 10.0, 50.0}) {
        WeightVector w = exp_weights(risks, 10, T);
        CHECK(w.weights[1] < prev_best);
        CHECK(w.weights[2] > prev_worst);
        prev_best = w.weights[1];
        prev_worst = w.weights[2];
    }

    WeightVector flat = exp_weights(risks, 10, 1e9);
    for (int i = 0; i < 3; ++i) CHECK_THAT(flat.weights[i], WithinAbs(1.0 / 3.0, 1e-6));

    WeightVector spike = exp_weights(risks, 10, 1e-12);
    CHECK(spike.weights[1] == 1.0);
    CHECK(spike.weights[0] == 0.0);
    CHECK(spike.weights[2] == 0.0);

    CHECK_THROWS_AS(exp_weights(Eigen::VectorXd(), 1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(exp_weights(risks, 0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(exp_weights(risks, 1, 0.0), std::invalid_argument);
    Eigen::VectorXd bad = risks;
    bad[0] = std::nan("");
    CHECK_THROWS_AS(exp_weights(bad, 1, 1.0), std::invalid_argument);
}

TEST_CASE("empirical risk minimizer selection and ties") {
    Eigen::VectorXd r(3);
    r << 3.0, 1.0, 2.0;
    CHECK(erm_select(r) == 1);
    Eigen::VectorXd tie(2);
    tie << 1.0, 1.0;
    CHECK(erm_select(tie) == 0);
    CHECK_THROWS_AS(erm_select(Eigen::VectorXd()), std::invalid_argument);
}

TEST_CASE("default temperature range") {
    std::vector<double> T = default_T_set();
    REQUIRE(T.size() == 10);
    CHECK(T.front() == 10.0);
    CHECK(T.back() == 100.0);
    for (std::size_t i = 1; i < T.size(); ++i) CHECK(T[i] - T[i - 1] == 10.0);
}

TEST_CASE("sample splits are balanced, exhaustive and reproducible") {
    SplitPlan plan = make_split(100, 0.75, 4);
    CHECK(plan.m == 75);
    CHECK(plan.l == 25);
    CHECK(plan.n == 100);
    CHECK(std::is_sorted(plan.train_idx.begin(), plan.train_idx.end()));
    CHECK(std::is_sorted(plan.learn_idx.begin(), plan.learn_idx.end()));
    std::set<int> all(plan.train_idx.begin(), plan.train_idx.end());
    all.insert(plan.learn_idx.begin(), plan.learn_idx.end());
    CHECK(static_cast<int>(all.size()) == 100);
    CHECK(*all.begin() == 0);
    CHECK(*all.rbegin() == 99);

    SplitPlan again = make_split(100, 0.75, 4);
    CHECK(plan.train_idx == again.train_idx);
    SplitPlan other = make_split(100, 0.75, 5);
    CHECK(plan.train_idx != other.train_idx);

    CHECK(make_split(101, 0.75, 1).m == 76);  // 75.75 rounds up
    CHECK(make_split(30, 0.75, 1).m == 23);   // 22.5 rounds half away from zero

    CHECK_THROWS_AS(make_split(2, 0.75, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_split(100, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_split(100, 1.0, 1), std::invalid_argument);
}

TEST_CASE("temperature selection scans and tie-breaks") {
    Eigen::VectorXd risks = risks3();
    Eigen::MatrixXd preds(3, 4);
    preds << 1.0, 2.0, 3.0, 4.0, 1.1, 1.9, 3.2, 3.9, 5.0, 5.0, 5.0, 5.0;
    Eigen::VectorXd y(4);
    y << 1.0, 2.0, 3.0, 4.0;

    TemperatureSelection one =
        select_temperature_from_predictions(preds, y, risks, 8, {42.0});
    CHECK(one.temperature == 42.0);
    REQUIRE(one.t_scores.size() == 1);

    // equal risks make every temperature produce the same uniform weights,
    // so the scan must fall back to the smallest T
    Eigen::VectorXd flat = Eigen::VectorXd::Constant(3, 0.7);
    TemperatureSelection tie =
        select_temperature_from_predictions(preds, y, flat, 8, {30.0, 10.0, 20.0});
    CHECK(tie.temperature == 10.0);

    // the reported weights and scores are exactly the rescan of the winner
    TemperatureSelection scan =
        select_temperature_from_predictions(preds, y, risks, 8, default_T_set());
    WeightVector redo = exp_weights(risks, 8, scan.temperature);
    CHECK((scan.weights.weights.array() == redo.weights.array()).all());
    std::vector<double> T_set = default_T_set();
    for (std::size_t t = 0; t < T_set.size(); ++t) {
        double score =
            (y - preds.transpose() * exp_weights(risks, 8, T_set[t]).weights).squaredNorm();
        CHECK_THAT(scan.t_scores[static_cast<Eigen::Index>(t)], WithinRel(score, 1e-12));
    }
    double best = scan.t_scores.minCoeff();
    CHECK(scan.t_scores[static_cast<Eigen::Index>(
              std::find(T_set.begin(), T_set.end(), scan.temperature) - T_set.begin())] == best);

    CHECK_THROWS_AS(select_temperature_from_predictions(preds, y, risks, 8, {}),
                    std::invalid_argument);
    CHECK_THROWS_AS(select_temperature_from_predictions(preds.topRows(2), y, risks, 8, {10.0}),
                    std::invalid_argument);
}

TEST_CASE("predictor-level temperature selection matches the matrix form") {
    DesignSpec design{DesignKind::uniform_unit_cube, 1, {}, {}};
    Dataset score = simulate_dataset(mapped_hardsine(), design, NoiseModel{0.3}, 15, 9);
    std::vector<Predictor> cands = {
        [](const Point& x) { return x[0]; },
        [](const Point& x) { return 1.0 - x[0]; },
        [](const Point&) { return 0.5; },
    };
    Eigen::VectorXd risks = risks3();
    Eigen::MatrixXd preds(3, score.n());
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < score.n(); ++i)
            preds(c, i) = cands[static_cast<std::size_t>(c)](score.xs[static_cast<std::size_t>(i)]);
    TemperatureSelection a = select_temperature(cands, risks, 12, score, default_T_set());
    TemperatureSelection b =
        select_temperature_from_predictions(preds, score.ys, risks, 12, default_T_set());
    CHECK(a.temperature == b.temperature);
    CHECK((a.t_scores.array() == b.t_scores.array()).all());
}

TEST_CASE("single-candidate aggregation degenerates to the plain fit") {
    DesignSpec design{DesignKind::uniform_unit_cube, 1, {}, {}};
    Dataset data = simulate_dataset(mapped_hardsine(), design, NoiseModel{0.25}, 40, 21);
    PermConfig only;
    only.kernel = KernelSpec{KernelFamily::cubic_spline, 1, 1.0};
    only.h = 0.05;
    std::vector<PermConfig> grid = {only};

    AggregateModel agg = fit_aggregate(data, grid, default_T_set(), 77);
    REQUIRE(agg.weights.size() == 1);
    CHECK(agg.weights.weights[0] == 1.0);

    SplitPlan plan = make_split(data.n(), 0.75, 77);
    CHECK(plan.train_idx == agg.plan.train_idx);
    KrrModel manual = fit_krr(subset(data, plan.train_idx), grid[0]);
    for (double t : {0.1, 0.33, 0.5, 0.77, 0.95}) {
        Point x = Point::Constant(1, t);
        CHECK(aggregate_predict(agg, x) == predict(manual, x));
    }
}

TEST_CASE("aggregation pipeline matches an independent reimplementation") {
    DesignSpec design{DesignKind::uniform_unit_cube, 1, {}, {}};
    Dataset data = simulate_dataset(mapped_hardsine(), design, NoiseModel{0.3}, 32, 55);

    auto verify = [&](const std::vector<PermConfig>& grid, std::uint64_t seed) {
        AggregateModel agg = fit_aggregate(data, grid, default_T_set(), seed);

        SplitPlan plan = make_split(data.n(), 0.75, seed);
        Dataset train = subset(data, plan.train_idx);
        Dataset learn = subset(data, plan.learn_idx);
        std::vector<KrrModel> models;
        std::vector<Predictor> preds;
        for (const PermConfig& config : grid) {
            models.push_back(fit_krr(train, config));
            preds.push_back(as_predictor(models.back()));
        }
        Eigen::VectorXd risks(static_cast<Eigen::Index>(grid.size()));
        for (std::size_t c = 0; c < grid.size(); ++c)
            risks[static_cast<Eigen::Index>(c)] = empirical_risk(preds[c], learn);
        TemperatureSelection sel =
            select_temperature(preds, risks, plan.n, data, default_T_set());

        CHECK(plan.train_idx == agg.plan.train_idx);
        CHECK(plan.learn_idx == agg.plan.learn_idx);
        for (Eigen::Index c = 0; c < risks.size(); ++c)
            CHECK_THAT(agg.weights.source_risks[c], WithinRel(risks[c], 1e-12));
        CHECK(agg.weights.temperature == sel.temperature);
        for (Eigen::Index c = 0; c < risks.size(); ++c)
            CHECK_THAT(agg.weights.weights[c], WithinAbs(sel.weights.weights[c], 1e-12));
        for (double t : {0.05, 0.4, 0.62, 0.9}) {
            Point x = Point::Constant(1, t);
            double manual = 0.0;
            for (std::size_t c = 0; c < grid.size(); ++c)
                manual += sel.weights.weights[static_cast<Eigen::Index>(c)] * preds[c](x);
            CHECK_THAT(aggregate_predict(agg, x), WithinAbs(manual, 1e-12));
        }
    };

    // shared-kernel grid exercises the cached-gram fast path
    verify(spline_grid(1e-3, 0.5, 6), 101);

    // heterogeneous kernels exercise the generic path
    std::vector<PermConfig> mixed;
    PermConfig a;
    a.kernel = KernelSpec{KernelFamily::gaussian, 1, 1.0};
    a.h = 0.1;
    PermConfig b;
    b.kernel = KernelSpec{KernelFamily::gaussian, 1, 0.4};
    b.h = 0.1;
    PermConfig c;
    c.kernel = KernelSpec{KernelFamily::brownian, 1, 1.0};
    c.h = 0.2;
    mixed = {a, b, c};
    verify(mixed, 102);
}

TEST_CASE("learning-half risks are frozen empirical risks") {
    DesignSpec design{DesignKind::uniform_unit_cube, 1, {}, {}};
    Dataset data = simulate_dataset(mapped_hardsine(), design, NoiseModel{0.4}, 48, 60);
    std::vector<PermConfig> grid = spline_grid(1e-3, 0.8, 9);
    AggregateModel agg = fit_aggregate(data, grid, default_T_set(), 13);
    Dataset learn = subset(data, agg.plan.learn_idx);
    for (std::size_t c = 0; c < grid.size(); ++c) {
        double direct = empirical_risk(
            [&](const Point& x) { return predict(agg.candidates[c], x); }, learn);
        // Point-by-point prediction sums kernel terms in a different order
        // than the matrix path; with near-interpolating candidates the dual
        // coefficients are large, so allow for that cancellation.
        CHECK_THAT(agg.weights.source_risks[static_cast<Eigen::Index>(c)],
                   WithinRel(direct, 1e-9));
    }
    CHECK(agg.weights.n_learn == data.n());
    CHECK_THAT(agg.weights.weights.sum(), WithinAbs(1.0, 1e-12));
    CHECK(agg.weights.weights.minCoeff() >= 0.0);

    CHECK_THROWS_AS(fit_aggregate(data, {}, default_T_set(), 1), std::invalid_argument);
}

TEST_CASE("aggregate stays within 1.5x of the best fitted candidate") {
    TargetFunction target = mapped_hardsine();
    DesignSpec design{DesignKind::uniform_unit_cube, 1, {}, {}};
    double sigma = calibrate_sigma(target, design, 2.0);
    std::vector<PermConfig> grid = spline_grid(1e-4, 1.0, 51);
    EvalSpec eval;
    eval.kind = EvalSpec::Kind::grid;
    eval.points = 2001;

    std::vector<double> ratios;
    for (int rep = 0; rep < 20; ++rep) {
        Dataset data = simulate_dataset(target, design, NoiseModel{sigma}, 100,
                                        derive_seed(777, static_cast<std::uint64_t>(rep)));
        AggregateModel agg = fit_aggregate(data, grid, default_T_set(),
                                           derive_seed(778, static_cast<std::uint64_t>(rep)));
        double agg_risk = l2_risk(as_predictor(agg), target, design, eval);
        double best = std::numeric_limits<double>::infinity();
        for (const KrrModel& cand : agg.candidates)
            best = std::min(best, l2_risk(as_predictor(cand), target, design, eval));
        ratios.push_back(agg_risk / best);
    }
    std::nth_element(ratios.begin(), ratios.begin() + 10, ratios.end());
    double median = ratios[10];
    INFO("median aggregate/best-candidate risk ratio " << median);
    CHECK(median <= 1.5);
}

TEST_CASE("jackknife with one replicate is a single aggregate") {
    DesignSpec design{DesignKind::uniform_unit_cube, 1, {}, {}};
    Dataset data = simulate_dataset(mapped_hardsine(), design, NoiseModel{0.3}, 36, 71);
    std::vector<PermConfig> grid = spline_grid(1e-3, 0.5, 7);

    JackknifeModel jack = jackknife_aggregate(data, grid, default_T_set(), 1, 5);
    REQUIRE(jack.replicates.size() == 1);
    AggregateModel single = fit_aggregate(data, grid, default_T_set(), derive_seed(5, 0));
    CHECK(single.plan.train_idx == jack.replicates[0].plan.train_idx);
    CHECK((single.weights.weights.array() == jack.replicates[0].weights.weights.array()).all());
    for (double t : {0.12, 0.5, 0.84}) {
        Point x = Point::Constant(1, t);
        CHECK(jackknife_predict(jack, x) == aggregate_predict(single, x));
    }

    CHECK_THROWS_AS(jackknife_aggregate(data, grid, default_T_set(), 0, 5), std::invalid_argument);
}

TEST_CASE("jackknife prediction is the mean over replicates") {
    DesignSpec design{DesignKind::uniform_unit_cube, 1, {}, {}};
    Dataset data = simulate_dataset(mapped_hardsine(), design, NoiseModel{0.3}, 36, 72);
    std::vector<PermConfig> grid = spline_grid(1e-3, 0.5, 7);
    JackknifeModel jack = jackknife_aggregate(data, grid, default_T_set(), 5, 6);
    REQUIRE(jack.replicates.size() == 5);
    for (double t : {0.2, 0.47, 0.9}) {
        Point x = Point::Constant(1, t);
        double acc = 0.0;
        for (const AggregateModel& rep : jack.replicates) acc += aggregate_predict(rep, x);
        CHECK(jackknife_predict(jack, x) == acc / 5.0);
    }
}

TEST_CASE("split averaging obeys the convexity risk bound") {
    // The averaged predictor is the mean of its J split replicates, so its
    // squared-error risk is at most the mean of the replicate risks (Jensen,
    // exact for fixed-grid quadrature with non-negative weights).
    TargetFunction target = mapped_hardsine();
    DesignSpec design{DesignKind::uniform_unit_cube, 1, {}, {}};
    double sigma = calibrate_sigma(target, design, 2.0);
    std::vector<PermConfig> grid = spline_grid(1e-3, 0.5, 21);
    EvalSpec eval;
    eval.kind = EvalSpec::Kind::grid;
    eval.points = 501;
    const int J = 24;

    for (std::uint64_t data_seed : {42ULL, 43ULL, 44ULL}) {
        Dataset data = simulate_dataset(target, design, NoiseModel{sigma}, 100, data_seed);

        JackknifeModel jack = jackknife_aggregate(data, grid, default_T_set(), J, 11);
        double jack_risk = l2_risk(as_predictor(jack), target, design, eval);

        double mean_single = 0.0;
        for (int j = 0; j < J; ++j) {
            AggregateModel one = fit_aggregate(data, grid, default_T_set(),
                                               derive_seed(11, static_cast<std::uint64_t>(j)));
            mean_single += l2_risk(as_predictor(one), target, design, eval);
        }
        mean_single /= J;
        INFO("dataset seed " << data_seed << ": jackknife " << jack_risk << " vs mean replicate "
                             << mean_single);
        CHECK(jack_risk <= mean_single * (1.0 + 1e-12));
    }
}

TEST_CASE("decay-exponent bandwidth ladder") {
    auto grid = build_rkhs_grid(0.6, 5.0, 100.0);
    REQUIRE(grid.size() == 21);  // 1 + floor((5.0 - 0.6) * log 100)
    CHECK(grid.front().first == 0.6);
    double step = 1.0 / std::log(100.0);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        CHECK_THAT(grid[k].first, WithinAbs(0.6 + k * step, 1e-12));
        CHECK_THAT(grid[k].second,
                   WithinRel(std::pow(100.0, -grid[k].first / (2.0 * grid[k].first + 1.0)), 1e-14));
        if (k > 0) CHECK(grid[k].second < grid[k - 1].second);  // strictly decreasing bandwidths
    }

    auto single = build_rkhs_grid(1.0, 1.0, 100.0);
    REQUIRE(single.size() == 1);
    CHECK_THAT(single[0].second, WithinRel(0.2154434690031884, 1e-15));

    CHECK_THROWS_AS(build_rkhs_grid(0.5, 2.0, 100.0), std::domain_error);
    CHECK_THROWS_AS(build_rkhs_grid(1.0, 0.9, 100.0), std::invalid_argument);
    CHECK_THROWS_AS(build_rkhs_grid(1.0, 2.0, 2.0), std::invalid_argument);
    CHECK_THROWS_AS(build_rkhs_grid(1.0, 2.0, 100.0, 0.0), std::invalid_argument);
}

TEST_CASE("anisotropic smoothness grid") {
    // one axis, range [1,2], n = 20: exactly two grid points
    SmoothnessGrid g1 = build_besov_grid(Eigen::VectorXd::Constant(1, 1.0),
                                         Eigen::VectorXd::Constant(1, 2.0), 20.0);
    REQUIRE(g1.grid_points.size() == 2);
    CHECK_THAT(g1.grid_points[0][0], WithinRel(1.333808200695334, 1e-14));
    CHECK_THAT(g1.grid_points[1][0], WithinRel(1.667616401390668, 1e-14));
    CHECK(g1.step_count == std::vector<int>{2});
    // in one dimension the harmonic mean is the value itself
    CHECK_THAT(g1.sbar[0], WithinRel(g1.grid_points[0][0], 1e-14));
    CHECK_THAT(g1.beta[1], WithinRel(1.0 / g1.grid_points[1][0], 1e-14));
    double s = g1.sbar[0];
    CHECK_THAT(g1.bandwidth[0], WithinRel(std::pow(20.0, -s / (2.0 * s + 1.0)), 1e-14));

    // multi-axis cardinality is the product of per-axis counts
    Eigen::VectorXd lo(2), hi(2);
    lo << 0.5, 1.0;
    hi << 2.0, 2.5;
    double n = 35.0;
    SmoothnessGrid g2 = build_besov_grid(lo, hi, n);
    std::size_t expect = 1;
    for (int i = 0; i < 2; ++i)
        expect *= static_cast<std::size_t>(std::floor((hi[i] - lo[i]) * std::log(n) + 1e-9));
    CHECK(g2.grid_points.size() == expect);
    CHECK(g2.sbar.size() == static_cast<Eigen::Index>(expect));

    // harmonic mean, complexity and bandwidth per point
    for (std::size_t p = 0; p < g2.grid_points.size(); ++p) {
        const Eigen::VectorXd& pt = g2.grid_points[p];
        double harmonic = 2.0 / (1.0 / pt[0] + 1.0 / pt[1]);
        CHECK_THAT(g2.sbar[static_cast<Eigen::Index>(p)], WithinRel(harmonic, 1e-12));
        CHECK_THAT(g2.beta[static_cast<Eigen::Index>(p)], WithinRel(2.0 / harmonic, 1e-12));
        CHECK_THAT(g2.bandwidth[static_cast<Eigen::Index>(p)],
                   WithinRel(std::pow(n, -harmonic / (2.0 * harmonic + 2.0)), 1e-12));
        for (int i = 0; i < 2; ++i) {
            CHECK(pt[i] > lo[i]);
            CHECK(pt[i] <= hi[i] + 1e-12);
        }
    }

    // a range narrower than 1/log n cannot hold a grid point
    Eigen::VectorXd tight_lo(2), tight_hi(2);
    tight_lo << 1.0, 1.0;
    tight_hi << 2.0, 1.1;
    CHECK_THROWS_WITH(build_besov_grid(tight_lo, tight_hi, 20.0),
                      Catch::Matchers::ContainsSubstring("axis 1"));

    CHECK_THROWS_AS(build_besov_grid(lo, hi.head(1), 20.0), std::invalid_argument);
    CHECK_THROWS_AS(build_besov_grid(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), 20.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_besov_grid(Eigen::VectorXd::Constant(1, 1.0),
                                     Eigen::VectorXd::Constant(1, 2.0), 2.0),
                    std::invalid_argument);
}

TEST_CASE("temperature scoring sample names round trip") {
    for (TScoreMode mode : {TScoreMode::train, TScoreMode::learn, TScoreMode::full})
        CHECK(t_score_mode_from_name(t_score_mode_name(mode)) == mode);
    CHECK_THROWS_AS(t_score_mode_from_name("test"), std::invalid_argument);
}
