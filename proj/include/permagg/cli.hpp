#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "permagg/aggregation.hpp"
#include "permagg/core.hpp"
#include "permagg/experiments.hpp"
#include "permagg/kernels.hpp"
#include "permagg/perm.hpp"
#include "permagg/rng.hpp"
#include "permagg/suboptimality.hpp"
#include "permagg/version.hpp"

namespace permagg {

namespace detail {

/// Numeric CSV with the response in the last column; an optional header row is
/// skipped when its first field does not parse as a number.
inline Dataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open data file: " + path);
    Dataset data;
    std::vector<double> ys;
    std::string line;
    int width = -1;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string field;
        bool numeric = true;
        while (std::getline(ss, field, ',')) {
            try {
                std::size_t used = 0;
                double v = std::stod(field, &used);
                while (used < field.size() && std::isspace(static_cast<unsigned char>(field[used])))
                    ++used;
                if (used != field.size()) throw std::invalid_argument(field);
                row.push_back(v);
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (lineno == 1) continue;  // header row
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": non-numeric field");
        }
        if (row.size() < 2)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": need at least one feature column plus the response");
        if (width < 0) width = static_cast<int>(row.size());
        if (static_cast<int>(row.size()) != width)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": inconsistent column count");
        Point x(width - 1);
        for (int k = 0; k + 1 < width; ++k) x[k] = row[static_cast<std::size_t>(k)];
        data.xs.push_back(std::move(x));
        ys.push_back(row.back());
    }
    if (data.xs.empty()) throw std::invalid_argument(path + ": no data rows");
    data.ys = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    return data;
}

inline AffineBox data_box(const std::vector<Point>& xs) {
    AffineBox box;
    box.lo = xs.front();
    box.hi = xs.front();
    for (const Point& x : xs) {
        box.lo = box.lo.cwiseMin(x);
        box.hi = box.hi.cwiseMax(x);
    }
    return box;
}

inline void write_weight_log(const std::filesystem::path& path,
                             const std::vector<WeightRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "method,n,rep,replicate,candidate,h,learn_risk,weight,temperature\n";
    for (const WeightRecord& r : records)
        out << r.method << ',' << r.n << ',' << r.rep << ',' << r.replicate << ',' << r.candidate
            << ',' << format_double(r.h) << ',' << format_double(r.learn_risk) << ','
            << format_double(r.weight) << ',' << format_double(r.temperature) << '\n';
}

}  // namespace detail

/// Entry point shared by the command-line binary and the in-process tests.
/// Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"kernel ridge aggregation toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(version_string));

    // --- mise ---------------------------------------------------------------
    auto* mise = app.add_subcommand("mise", "Monte Carlo MISE benchmark of bandwidth selectors");
    std::string mise_config, mise_out;
    std::uint64_t mise_seed = 0;
    bool dump_weights = false;
    mise->add_option("--config", mise_config, "JSON experiment configuration")->required();
    mise->add_option("--out", mise_out, "output directory")->required();
    auto* mise_seed_opt = mise->add_option("--seed", mise_seed, "override master_seed");
    mise->add_flag("--dump-weights", dump_weights,
                   "also write per-split aggregation weights (weights.csv)");

    // --- subopt -------------------------------------------------------------
    auto* subopt = app.add_subcommand(
        "subopt", "Monte Carlo excess risk of selection over an adversarial dictionary");
    std::vector<int> so_M, so_n;
    int so_reps = 5000;
    double so_C = 4.0, so_sigma = 1.0;
    std::uint64_t so_seed = 1;
    std::string so_out;
    subopt->add_option("--M", so_M, "dictionary sizes")->required()->delimiter(',');
    subopt->add_option("--n", so_n, "sample sizes")->required()->delimiter(',');
    subopt->add_option("--reps", so_reps, "Monte Carlo repetitions");
    subopt->add_option("--C", so_C, "margin scale");
    subopt->add_option("--sigma", so_sigma, "noise level");
    subopt->add_option("--seed", so_seed, "master seed");
    subopt->add_option("--out", so_out, "output directory")->required();

    // --- fit ----------------------------------------------------------------
    auto* fit = app.add_subcommand("fit", "fit a kernel ridge model to a CSV dataset");
    fit->set_help_flag("--help", "print help");  // frees -h/--h for the bandwidth option
    std::string fit_data, fit_kernel = "cubic-spline", fit_select, fit_out;
    double fit_width = 1.0, fit_h = 0.0;
    bool fit_intercept = false;
    std::uint64_t fit_seed = 1;
    fit->add_option("--data", fit_data, "CSV with the response in the last column")->required();
    fit->add_option("--kernel", fit_kernel, "gaussian|cubic-spline|brownian|linear");
    fit->add_option("--width", fit_width, "gaussian kernel width");
    auto* fit_h_opt = fit->add_option("--h", fit_h, "fixed bandwidth");
    auto* fit_select_opt =
        fit->add_option("--select", fit_select, "bandwidth selection: gcv|cv|aggregate");
    fit->add_flag("--intercept", fit_intercept, "include an unpenalized intercept");
    fit->add_option("--seed", fit_seed, "seed for the aggregate split");
    fit->add_option("--out", fit_out, "model JSON path (default: stdout)");

    // --- grid ---------------------------------------------------------------
    auto* grid = app.add_subcommand("grid", "print smoothness-adaptive bandwidth grids");
    grid->require_subcommand(1);
    auto* grid_rkhs = grid->add_subcommand("rkhs", "decay-exponent grid with step 1/log n");
    double gr_lmin = 0.0, gr_lmax = 0.0, gr_n = 0.0, gr_a = 1.0;
    std::uint64_t grid_seed = 1;
    grid_rkhs->add_option("--lmin", gr_lmin, "smallest decay exponent (> 1/2)")->required();
    grid_rkhs->add_option("--lmax", gr_lmax, "largest decay exponent")->required();
    grid_rkhs->add_option("--n", gr_n, "sample size")->required();
    grid_rkhs->add_option("--a", gr_a, "bandwidth prefactor");
    grid_rkhs->add_option("--seed", grid_seed, "accepted for interface uniformity (unused)");
    auto* grid_besov = grid->add_subcommand("besov", "anisotropic smoothness grid");
    std::vector<double> gb_smin, gb_smax;
    double gb_n = 0.0;
    int gb_d = 0;
    grid_besov->add_option("--smin", gb_smin, "lower smoothness per axis")
        ->required()
        ->delimiter(',');
    grid_besov->add_option("--smax", gb_smax, "upper smoothness per axis")
        ->required()
        ->delimiter(',');
    grid_besov->add_option("--n", gb_n, "sample size")->required();
    grid_besov->add_option("--d", gb_d, "dimension (broadcasts scalar bounds)");
    grid_besov->add_option("--seed", grid_seed, "accepted for interface uniformity (unused)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (mise->parsed()) {
            ExperimentConfig cfg = load_experiment_config(mise_config);
            if (mise_seed_opt->count() > 0) cfg.master_seed = mise_seed;
            std::vector<WeightRecord> weights;
            RiskReport report = run_mise_benchmark(cfg, dump_weights ? &weights : nullptr);
            std::filesystem::path out_dir(mise_out);
            write_report(report, out_dir);
            emit_plot_data(report, out_dir);
            if (dump_weights) detail::write_weight_log(out_dir / "weights.csv", weights);
            std::cout << "sigma=" << format_double(report.sigma) << "\n";
            for (const ReportCell& cell : report.cells)
                std::cout << cell.method << " n=" << cell.n
                          << " mise=" << format_double(cell.mise_mean)
                          << " sd=" << format_double(cell.mise_sd) << "\n";
            std::cout << "wrote " << (out_dir / "risks.csv").string() << "\n";
            return 0;
        }
        if (subopt->parsed()) {
            if (so_reps < 1) throw std::invalid_argument("subopt: --reps must be >= 1");
            std::vector<ExcessRow> rows;
            for (int M : so_M)
                for (int n : so_n) {
                    DyadicSetup setup = make_dyadic_setup(M, n, so_C, so_sigma);
                    std::uint64_t cell_seed =
                        derive_seed(derive_seed(so_seed, static_cast<std::uint64_t>(M)),
                                    static_cast<std::uint64_t>(n));
                    ExcessResult res = erm_excess_mc(setup, so_reps, {}, cell_seed);
                    ExcessRow row;
                    row.M = M;
                    row.n = n;
                    row.excess = res.excess;
                    row.bound = std::sqrt(std::log(static_cast<double>(M)) / n);
                    row.ratio = res.excess / row.bound;
                    rows.push_back(row);
                }
            std::filesystem::path out_dir(so_out);
            std::filesystem::create_directories(out_dir);
            write_excess_table(out_dir / "excess.csv", rows);
            emit_excess_plot(out_dir / "excess_plot.csv", rows);
            for (const ExcessRow& row : rows)
                std::cout << "M=" << row.M << " n=" << row.n
                          << " excess=" << format_double(row.excess)
                          << " ratio=" << format_double(row.ratio) << "\n";
            std::cout << "wrote " << (out_dir / "excess.csv").string() << "\n";
            return 0;
        }
        if (fit->parsed()) {
            if ((fit_h_opt->count() > 0) == (fit_select_opt->count() > 0))
                throw std::invalid_argument("fit: give exactly one of --h or --select");
            Dataset raw = detail::read_dataset_csv(fit_data);
            KernelSpec kernel;
            kernel.family = kernel_family_from_name(fit_kernel);
            kernel.d = raw.d();
            kernel.width = fit_width;
            validate_kernel(kernel);
            detail::AffineBox box = detail::data_box(raw.xs);
            Dataset data;
            data.ys = raw.ys;
            for (const Point& x : raw.xs) data.xs.push_back(box.map(x));

            nlohmann::json model_json;
            model_json["version"] = version_string;
            model_json["kernel"] = fit_kernel;
            model_json["width"] = fit_width;
            model_json["d"] = raw.d();
            model_json["n"] = raw.n();
            model_json["intercept_enabled"] = fit_intercept;
            model_json["box"] = {
                {"lo", std::vector<double>(box.lo.data(), box.lo.data() + box.lo.size())},
                {"hi", std::vector<double>(box.hi.data(), box.hi.data() + box.hi.size())}};
            nlohmann::json points = nlohmann::json::array();
            for (const Point& x : data.xs)
                points.push_back(std::vector<double>(x.data(), x.data() + x.size()));
            model_json["points"] = std::move(points);

            detail::ComposedModel composed;
            composed.alpha = Eigen::VectorXd::Zero(raw.n());
            if (fit_h_opt->count() > 0) {
                PermConfig config{kernel, fit_h, 2.0, fit_intercept, {}};
                KrrModel model = fit_krr(data, config);
                composed.alpha = model.dual_coeffs;
                composed.intercept = model.intercept_value;
                model_json["method"] = "fixed";
                model_json["h"] = fit_h;
            } else if (fit_select == "gcv" || fit_select == "cv") {
                SelectionResult sel = select_h(data, kernel, HGridSpec{}.make(raw.n()),
                                               fit_select == "gcv" ? ScoreCriterion::gcv
                                                                   : ScoreCriterion::loocv,
                                               fit_intercept);
                PermConfig config{kernel, sel.h, 2.0, fit_intercept, {}};
                KrrModel model = fit_krr(data, config);
                composed.alpha = model.dual_coeffs;
                composed.intercept = model.intercept_value;
                model_json["method"] = fit_select;
                model_json["h"] = sel.h;
            } else if (fit_select == "aggregate") {
                std::vector<PermConfig> candidates;
                for (double h : HGridSpec{}.make(raw.n()))
                    candidates.push_back(PermConfig{kernel, h, 2.0, fit_intercept, {}});
                AggregateModel agg =
                    fit_aggregate(data, candidates, default_T_set(), fit_seed);
                detail::scatter_aggregate(agg, 1.0, composed);
                model_json["method"] = "aggregate";
                model_json["h"] = nullptr;
                model_json["temperature"] = agg.weights.temperature;
            } else {
                throw std::invalid_argument("fit: --select must be gcv|cv|aggregate, got " +
                                            fit_select);
            }
            model_json["alpha"] = std::vector<double>(
                composed.alpha.data(), composed.alpha.data() + composed.alpha.size());
            model_json["intercept"] = composed.intercept;

            if (fit_out.empty()) {
                std::cout << model_json.dump(2) << "\n";
            } else {
                std::ofstream out(fit_out);
                if (!out) throw std::runtime_error("cannot write " + fit_out);
                out << model_json.dump(2) << "\n";
                std::cout << "wrote " << fit_out << "\n";
            }
            return 0;
        }
        if (grid_rkhs->parsed()) {
            std::cout << "l,h\n";
            for (auto [l, h] : build_rkhs_grid(gr_lmin, gr_lmax, gr_n, gr_a))
                std::cout << format_double(l) << ',' << format_double(h) << "\n";
            return 0;
        }
        if (grid_besov->parsed()) {
            if (gb_d > 0) {
                if (gb_smin.size() == 1) gb_smin.assign(static_cast<std::size_t>(gb_d), gb_smin[0]);
                if (gb_smax.size() == 1) gb_smax.assign(static_cast<std::size_t>(gb_d), gb_smax[0]);
            }
            Eigen::VectorXd smin = Eigen::Map<const Eigen::VectorXd>(
                gb_smin.data(), static_cast<Eigen::Index>(gb_smin.size()));
            Eigen::VectorXd smax = Eigen::Map<const Eigen::VectorXd>(
                gb_smax.data(), static_cast<Eigen::Index>(gb_smax.size()));
            SmoothnessGrid sg = build_besov_grid(smin, smax, gb_n);
            std::cout << "index,s,sbar,beta,bandwidth\n";
            for (std::size_t p = 0; p < sg.grid_points.size(); ++p) {
                std::string coords;
                for (Eigen::Index k = 0; k < sg.grid_points[p].size(); ++k) {
                    if (k > 0) coords += ';';
                    coords += format_double(sg.grid_points[p][k]);
                }
                std::cout << p << ',' << coords << ','
                          << format_double(sg.sbar[static_cast<Eigen::Index>(p)]) << ','
                          << format_double(sg.beta[static_cast<Eigen::Index>(p)]) << ','
                          << format_double(sg.bandwidth[static_cast<Eigen::Index>(p)]) << "\n";
            }
            return 0;
        }
        throw std::runtime_error("no subcommand dispatched");
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace permagg
