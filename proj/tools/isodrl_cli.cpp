// Command-line front end for the isodrl library.
//
// Exit codes: 0 success, 1 usage error, 2 data or config error, 3 numeric failure.
// Errors go to stderr as "isodrl: error[<kind>]: <message>".

#include "isodrl.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

using namespace isodrl;
using json = nlohmann::ordered_json;

namespace {

constexpr int exit_usage = 1;
constexpr int exit_data = 2;
constexpr int exit_numeric = 3;
constexpr int manifest_schema_version = 1;

// ---------------------------------------------------------------------------
// Grids: "lo:hi:count", "log:lo:hi:count" or a comma-separated list.

std::vector<double> parse_grid(const std::string& text) {
    std::string body = text;
    bool logarithmic = false;
    if (body.rfind("log:", 0) == 0) {
        logarithmic = true;
        body = body.substr(4);
    }
    if (body.find(':') != std::string::npos) {
        const auto parts = detail::split(body, ':');
        require(parts.size() == 3, "grid '" + text + "' must look like lo:hi:count");
        double lo, hi;
        long count;
        try {
            lo = std::stod(parts[0]);
            hi = std::stod(parts[1]);
            count = std::stol(parts[2]);
        } catch (const std::exception&) {
            fail(ErrorKind::invalid_argument, "grid '" + text + "' has a non-numeric field");
        }
        require(count >= 1, "grid count must be >= 1");
        return logarithmic ? log_grid(lo, hi, static_cast<std::size_t>(count))
                           : linear_grid(lo, hi, static_cast<std::size_t>(count));
    }
    require(!logarithmic, "log: prefix needs lo:hi:count");
    std::vector<double> out;
    for (const auto& field : detail::split(body, ',')) {
        try {
            out.push_back(std::stod(field));
        } catch (const std::exception&) {
            fail(ErrorKind::invalid_argument, "grid '" + text + "' has a non-numeric entry");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Inputs

struct DataDir {
    std::string path = "data";
    bool from_env = false;
};

DataDir data_dir() {
    if (const char* env = std::getenv("ISODRL_DATA_DIR"); env && *env) return {env, true};
    return {};
}

EmpiricalDistribution masses_or_uniform(const std::string& path, std::size_t n) {
    if (path.empty()) return EmpiricalDistribution::uniform(n);
    return EmpiricalDistribution::from_masses(read_column(path));
}

std::vector<std::vector<double>> read_rows(const std::string& path) { return read_numeric_csv(path).rows; }

Eigen::MatrixXd read_matrix(const std::string& path, const std::vector<std::string>& exclude) {
    const auto table = read_numeric_csv(path);
    std::vector<std::size_t> keep;
    for (std::size_t k = 0; k < table.header.size(); ++k)
        if (std::find(exclude.begin(), exclude.end(), table.header[k]) == exclude.end()) keep.push_back(k);
    require(!keep.empty(), "no feature columns left in " + path);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < table.rows.size(); ++i)
        for (std::size_t k = 0; k < keep.size(); ++k)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = table.rows[i][keep[k]];
    return out;
}

// ---------------------------------------------------------------------------
// Output

class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty()) {
            file_.open(path);
            if (!file_) fail(ErrorKind::io_error, "cannot write " + path);
        }
    }
    std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

void write_column(const std::string& path, const std::string& name, const std::vector<double>& values) {
    Output out(path);
    write_numeric_csv(out.stream(), {name}, {values});
}

json number(double v) {
    if (std::isfinite(v)) return v;
    return std::isnan(v) ? json("nan") : json(v > 0 ? "inf" : "-inf");
}

/// Every option of the subcommand with its resolved value, defaults included.
json resolved_options(const CLI::App& sub) {
    json out = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
        if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
        const std::string& name = opt->get_lnames().front();
        if (opt->get_type_size() == 0) {
            out[name] = opt->count() > 0;
            continue;
        }
        if (opt->count() > 0) {
            const auto& res = opt->results();
            out[name] = res.size() == 1 ? json(res.front()) : json(res);
        } else {
            out[name] = opt->get_default_str().empty() ? json(nullptr) : json(opt->get_default_str());
        }
    }
    return out;
}

struct Common {
    std::uint64_t seed = 0;
    std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
    std::string manifest;
};

void write_manifest(const Common& common, const CLI::App& sub, const std::string& out_path, json summary) {
    const DataDir dir = data_dir();
    json m;
    m["schema_version"] = manifest_schema_version;
    m["results_schema_version"] = result_schema_version;
    m["subcommand"] = sub.get_name();
    m["seed"] = common.seed;
    m["threads"] = common.threads;
    m["data_dir"] = {{"path", dir.path}, {"source", dir.from_env ? "ISODRL_DATA_DIR" : "default"}};
    m["options"] = resolved_options(sub);
    m["output"] = out_path.empty() ? json(nullptr) : json(out_path);
    m["summary"] = std::move(summary);

    std::string path = common.manifest;
    if (path.empty() && !out_path.empty()) path = out_path + ".manifest.json";
    if (path.empty()) {
        std::cerr << "manifest: " << m.dump() << '\n';
        return;
    }
    std::ofstream f(path);
    if (!f) fail(ErrorKind::io_error, "cannot write " + path);
    f << m.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Shared option groups

struct SetOptions {
    std::optional<double> rho, a, b, gamma;

    void add(CLI::App* sub, std::optional<double> default_gamma_value) {
        gamma = default_gamma_value;
        sub->add_option("--rho", rho, "KL radius");
        sub->add_option("--a", a, "lower likelihood-ratio bound");
        sub->add_option("--b", b, "upper likelihood-ratio bound");
        auto* g = sub->add_option("--gamma", gamma, "cap on the weights");
        if (default_gamma_value) g->default_val(*default_gamma_value);
    }

    UncertaintySet build() const {
        const bool kl = rho.has_value();
        const bool band = a.has_value() || b.has_value();
        require(kl != band, "give either --rho or both --a and --b");
        if (kl) return UncertaintySet::kl(*rho, gamma);
        require(a.has_value() && b.has_value(), "bounds need both --a and --b");
        return UncertaintySet::bounds(*a, *b, gamma);
    }
};

json dual_json(const ExcessRiskSolution& sol) {
    json out;
    out["delta"] = number(sol.delta);
    if (const auto* d = std::get_if<BoundsDual>(&sol.dual)) {
        out["t_star"] = number(d->t_star);
        out["eta_star"] = number(d->eta_star);
        out["q_star"] = number(d->q_star);
    } else if (const auto* d = std::get_if<FDivDual>(&sol.dual)) {
        out["lambda"] = number(d->lambda_star);
        out["nu"] = number(d->nu_star);
        out["divergence"] = number(d->divergence);
        out["slack"] = d->slack;
    }
    return out;
}

std::pair<std::string, std::string> wine_files(const std::string& white, const std::string& red) {
    const std::string dir = data_dir().path;
    std::pair<std::string, std::string> paths{white.empty() ? dir + "/winequality-white.csv" : white,
                                              red.empty() ? dir + "/winequality-red.csv" : red};
    for (const auto& p : {paths.first, paths.second})
        if (!std::filesystem::exists(p))
            fail(ErrorKind::io_error, "wine file '" + p + "' not found; run tools/fetch_wine.sh or set ISODRL_DATA_DIR");
    return paths;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Isotonic distributionally robust excess risk and conformal calibration"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "read options from a TOML or INI file; flags override it");
    Common common;
    app.add_option("--seed", common.seed, "master seed")->capture_default_str();
    app.add_option("--threads", common.threads, "worker threads for repetitions")->capture_default_str();
    app.add_option("--manifest", common.manifest, "manifest path (default: <out>.manifest.json, or stderr)");

    // project -------------------------------------------------------------
    std::string values_file, values_column, scores_file, points_file, masses_file, out_file;
    auto* project_cmd = app.add_subcommand("project", "isotonic projection of a value column");
    project_cmd->add_option("--values", values_file, "CSV with the values")->required();
    project_cmd->add_option("--column", values_column, "column name (default: the only column)");
    auto* scores_opt = project_cmd->add_option("--scores", scores_file, "CSV column of scores (chain order)");
    auto* points_opt = project_cmd->add_option("--points", points_file, "CSV of points (componentwise order)");
    scores_opt->excludes(points_opt);
    project_cmd->add_option("--masses", masses_file, "CSV column of point masses (default: uniform)");
    project_cmd->add_option("--out", out_file, "output CSV (default: stdout)");

    // solve ---------------------------------------------------------------
    std::string risks_file, risk_column, weights_out;
    SetOptions solve_set;
    auto* solve_cmd = app.add_subcommand("solve", "worst-case excess risk over an uncertainty set");
    solve_cmd->add_option("--risks", risks_file, "CSV column of risks")->required();
    solve_cmd->add_option("--column", risk_column, "risk column name");
    solve_cmd->add_option("--masses", masses_file, "CSV column of point masses (default: uniform)");
    solve_cmd->add_option("--weights-out", weights_out, "write the worst-case weights to this CSV");
    solve_set.add(solve_cmd, std::nullopt);

    // iso-solve -----------------------------------------------------------
    std::string w0_file, projected_out;
    SetOptions iso_set;
    auto* iso_cmd = app.add_subcommand("iso-solve", "worst-case excess risk with isotonic weights");
    iso_cmd->add_option("--risks", risks_file, "CSV column of risks")->required();
    iso_cmd->add_option("--column", risk_column, "risk column name");
    auto* w0_opt = iso_cmd->add_option("--w0-file", w0_file, "CSV column of w0 scores (chain order)");
    auto* iso_points = iso_cmd->add_option("--order-file,--points", points_file, "CSV of points (componentwise order)");
    w0_opt->excludes(iso_points);
    iso_cmd->add_option("--masses", masses_file, "CSV column of point masses (default: uniform)");
    iso_cmd->add_option("--projected-out", projected_out, "write the projected risks to this CSV");
    iso_set.add(iso_cmd, default_gamma);

    // ratio ---------------------------------------------------------------
    std::string source_file, target_file, eval_file, method = "logistic";
    std::vector<std::string> exclude;
    std::optional<double> bandwidth;
    double l2 = LogisticOptions{}.l2;
    auto* ratio_cmd = app.add_subcommand("ratio", "fit a density ratio from two unlabeled samples");
    ratio_cmd->add_option("--source", source_file, "source sample CSV")->required();
    ratio_cmd->add_option("--target", target_file, "target sample CSV")->required();
    ratio_cmd->add_option("--eval", eval_file, "points to evaluate (default: the source sample)");
    ratio_cmd->add_option("--exclude", exclude, "columns to drop, e.g. a response")->delimiter(',');
    ratio_cmd->add_option("--method", method, "logistic or kde")
        ->check(CLI::IsMember({"logistic", "kde"}))
        ->capture_default_str();
    ratio_cmd->add_option("--bandwidth", bandwidth, "KDE bandwidth (default: cross-validated)");
    ratio_cmd->add_option("--l2", l2, "logistic ridge penalty")->capture_default_str();
    ratio_cmd->add_option("--out", out_file, "output CSV (default: stdout)");

    // rho-hat -------------------------------------------------------------
    RhoHatConfig rho_hat_cfg;
    std::string white_file, red_file;
    bool use_wine = false;
    auto* rho_hat_cmd = app.add_subcommand("rho-hat", "repeated KDE refits of the plug-in KL estimate");
    rho_hat_cmd->add_option("--source", source_file, "source sample CSV");
    rho_hat_cmd->add_option("--target", target_file, "target sample CSV");
    rho_hat_cmd->add_option("--exclude", exclude, "columns to drop")->delimiter(',');
    rho_hat_cmd->add_flag("--wine", use_wine, "use the white (source) and red (target) wine features");
    rho_hat_cmd->add_option("--white", white_file, "white wine CSV (default: data dir)");
    rho_hat_cmd->add_option("--red", red_file, "red wine CSV (default: data dir)");
    rho_hat_cmd->add_option("--reps", rho_hat_cfg.repetitions, "refits")->capture_default_str();
    rho_hat_cmd->add_option("--bandwidth", rho_hat_cfg.bandwidth, "KDE bandwidth")->capture_default_str();
    rho_hat_cmd->add_option("--fraction", rho_hat_cfg.fraction, "subsample fraction per group")->capture_default_str();
    rho_hat_cmd->add_option("--eval-count", rho_hat_cfg.eval_count, "source points averaged (0: all)")
        ->capture_default_str();
    rho_hat_cmd->add_option("--out", out_file, "output CSV (default: stdout)");

    // probe ---------------------------------------------------------------
    ProbeInstance probe;
    std::string n_grid_text = "250,500,1000,2000,4000";
    bool noiseless = false;
    SetOptions probe_set;
    auto* probe_cmd = app.add_subcommand("probe", "error of the isotonic estimate against sample size");
    probe_cmd->add_option("--n", n_grid_text, "sample sizes (list or lo:hi:count)")->capture_default_str();
    probe_cmd->add_option("--reps", probe.repetitions, "repetitions per size")->capture_default_str();
    probe_cmd->add_option("--noise-sd", probe.noise_sd, "observation noise")->capture_default_str();
    probe_cmd->add_option("--reference-factor", probe.reference_factor, "reference size over the largest n")
        ->capture_default_str();
    probe_cmd->add_flag("--noiseless", noiseless, "observe the risk without noise");
    probe_set.add(probe_cmd, default_gamma);
    probe_cmd->add_option("--out", out_file, "output CSV (default: stdout)");

    // synthetic / wine ----------------------------------------------------
    ExperimentConfig exp;
    std::string eta_text, rho_grid_text;
    auto add_experiment = [&](CLI::App* sub) {
        sub->add_option("--eta", eta_text, "split ratios (list or lo:hi:count)");
        sub->add_option("--rho-grid", rho_grid_text, "radius grid (list, lo:hi:count or log:lo:hi:count)");
        sub->add_option("--reps", exp.repetitions, "repetitions")->capture_default_str();
        sub->add_option("--alpha", exp.alpha, "target miscoverage")->capture_default_str();
        sub->add_option("--gamma", exp.gamma, "cap on the weights")->capture_default_str();
        sub->add_flag("--componentwise", exp.componentwise, "also run the componentwise order");
        sub->add_option("--out", out_file, "results CSV (default: stdout)");
    };
    auto* synthetic_cmd = app.add_subcommand("synthetic", "Gaussian covariate-shift experiment");
    add_experiment(synthetic_cmd);
    std::optional<double> fixed_rho;
    synthetic_cmd->add_option("--zeta", exp.zeta, "target covariance correlation")->capture_default_str();
    synthetic_cmd->add_option("--rho", fixed_rho, "radius for eta sweeps (default: analytic KL)");
    synthetic_cmd->add_option("--N", exp.N, "source sample size")->capture_default_str();
    synthetic_cmd->add_option("--M", exp.M, "target sample size")->capture_default_str();
    auto* wine_cmd = app.add_subcommand("wine", "white-to-red wine quality experiment");
    add_experiment(wine_cmd);
    wine_cmd->add_option("--white", white_file, "white wine CSV (default: data dir)");
    wine_cmd->add_option("--red", red_file, "red wine CSV (default: data dir)");

    app.failure_message(CLI::FailureMessage::help);
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "isodrl: error[usage]: " << e.what() << "\n\n" << app.help();
        return exit_usage;
    }

    try {
        require(common.threads >= 1, "--threads must be >= 1");
        CLI::App* sub = app.get_subcommands().front();

        if (sub == project_cmd) {
            require(!scores_file.empty() || !points_file.empty(), "project needs --scores or --points");
            const auto values = read_column(values_file, values_column);
            const auto dist = masses_or_uniform(masses_file, values.size());
            const OrderSpec order = scores_file.empty() ? OrderSpec{ComponentwiseOrder{read_rows(points_file)}}
                                                        : OrderSpec{ScoreOrder{read_column(scores_file)}};
            const auto result = project(dist, values, order);
            write_column(out_file, "projected", result.projected);
            write_manifest(common, *sub, out_file, {{"sse", number(result.sse)}});
        } else if (sub == solve_cmd) {
            const auto risk = read_column(risks_file, risk_column);
            const auto dist = masses_or_uniform(masses_file, risk.size());
            const auto sol = solve(dist, risk, solve_set.build());
            if (!weights_out.empty()) write_column(weights_out, "weight", sol.weights);
            const json out = dual_json(sol);
            std::cout << out.dump(2) << '\n';
            write_manifest(common, *sub, weights_out, out);
        } else if (sub == iso_cmd) {
            require(!w0_file.empty() || !points_file.empty(), "iso-solve needs --w0-file or --points");
            const auto risk = read_column(risks_file, risk_column);
            const auto dist = masses_or_uniform(masses_file, risk.size());
            const UncertaintySet set = iso_set.build();
            const OrderSpec order = w0_file.empty() ? OrderSpec{ComponentwiseOrder{read_rows(points_file)}}
                                                    : OrderSpec{ScoreOrder{read_column(w0_file)}};
            const auto rep = solve_iso(dist, risk, set, order, set.truncation().value_or(default_gamma));
            if (!projected_out.empty()) write_column(projected_out, "projected", rep.projected_risk.projected);
            json out = dual_json(rep.solution);
            out.erase("delta");
            out["delta_iso"] = number(rep.delta_iso);
            out["delta_plain"] = number(rep.delta_plain);
            out["gamma"] = rep.gamma;
            std::cout << out.dump(2) << '\n';
            write_manifest(common, *sub, projected_out, out);
        } else if (sub == ratio_cmd) {
            const Eigen::MatrixXd src = read_matrix(source_file, exclude);
            const Eigen::MatrixXd tgt = read_matrix(target_file, exclude);
            const Eigen::MatrixXd eval = eval_file.empty() ? src : read_matrix(eval_file, exclude);
            json summary;
            std::vector<double> w;
            if (method == "logistic") {
                LogisticOptions opts;
                opts.l2 = l2;
                const auto model = fit_logistic_ratio(src, tgt, opts);
                w = ratios_at(model, eval);
                summary = {{"converged", model.converged}, {"iterations", model.iterations}};
            } else {
                const auto model = fit_kde_ratio(src, tgt, bandwidth);
                w = ratios_at(model, eval);
                summary = {{"bandwidth", model.bandwidth}};
            }
            write_column(out_file, "w0", w);
            write_manifest(common, *sub, out_file, summary);
        } else if (sub == rho_hat_cmd) {
            Eigen::MatrixXd src, tgt;
            if (use_wine) {
                const auto [white, red] = wine_files(white_file, red_file);
                const auto data = load_wine(white, red);
                src = data.train.X;
                tgt = data.test.X;
            } else {
                require(!source_file.empty() && !target_file.empty(), "rho-hat needs --source and --target, or --wine");
                src = read_matrix(source_file, exclude);
                tgt = read_matrix(target_file, exclude);
            }
            rho_hat_cfg.master_seed = common.seed;
            rho_hat_cfg.threads = common.threads;
            const auto values = rho_hat_distribution(src, tgt, rho_hat_cfg);
            write_column(out_file, "rho_hat", values);
            write_manifest(common, *sub, out_file, {{"median", number(median(values))}});
        } else if (sub == probe_cmd) {
            std::vector<std::size_t> n_grid;
            for (double v : parse_grid(n_grid_text)) {
                require(v >= 2 && v == std::floor(v), "sample sizes must be integers >= 2");
                n_grid.push_back(static_cast<std::size_t>(v));
            }
            if (probe_set.rho || probe_set.a || probe_set.b) probe.set = probe_set.build();
            probe.gamma = probe_set.gamma.value_or(default_gamma);
            probe.threads = common.threads;
            const auto table = convergence_probe(n_grid, probe, common.seed, !noiseless);
            Output out(out_file);
            std::vector<double> ns, med, mean;
            for (const auto& row : table.rows) {
                ns.push_back(static_cast<double>(row.n));
                med.push_back(row.median_error);
                mean.push_back(row.mean_error);
            }
            write_numeric_csv(out.stream(), {"n", "median_error", "mean_error"}, {ns, med, mean});
            json summary{{"reference", number(table.reference)}, {"reference_n", table.reference_n}};
            if (table.rows.size() >= 2) summary["loglog_slope"] = number(loglog_slope(table));
            write_manifest(common, *sub, out_file, summary);
        } else {
            exp.master_seed = common.seed;
            exp.threads = common.threads;
            if (!eta_text.empty()) exp.eta_grid = parse_grid(eta_text);
            if (!rho_grid_text.empty()) exp.rho_grid = parse_grid(rho_grid_text);
            std::vector<ResultRow> rows;
            if (sub == synthetic_cmd) {
                if (fixed_rho) exp.rho = fixed_rho;
                if (!exp.rho_grid.empty()) {
                    if (eta_text.empty()) exp.eta_grid = {0.1};
                    rows = run_varying_rho(exp);
                } else {
                    rows = run_varying_eta(exp);
                }
            } else {
                std::tie(exp.white_csv, exp.red_csv) = wine_files(white_file, red_file);
                if (eta_text.empty()) exp.eta_grid = {0.02};
                rows = run_wine(exp);
            }
            Output out(out_file);
            write_results_csv(out.stream(), rows);
            json summary{{"rows", rows.size()}};
            if (sub == synthetic_cmd) summary["rho_star"] = number(synthetic_rho_star(exp));
            write_manifest(common, *sub, out_file, summary);
        }
    } catch (const Error& e) {
        std::cerr << "isodrl: error[" << to_string(e.kind()) << "]: " << e.what() << '\n';
        switch (e.kind()) {
        case ErrorKind::invalid_argument:
        case ErrorKind::io_error:
        case ErrorKind::schema_error: return exit_data;
        default: return exit_numeric;
        }
    } catch (const std::exception& e) {
        std::cerr << "isodrl: error[internal]: " << e.what() << '\n';
        return exit_numeric;
    }
    return 0;
}
