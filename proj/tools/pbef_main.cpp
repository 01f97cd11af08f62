// Command-line front end: simulate paths, run single estimations, compute
// asymptotic-variance reports, and drive full replication studies from a
// JSON experiment configuration.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "pbef/config.hpp"
#include "pbef/experiment.hpp"
#include "pbef/potential.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string format = "csv";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 0;
};

pbef::ExperimentConfig load(const CommonArgs& args) {
    pbef::ExperimentConfig cfg = pbef::load_experiment_config(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.jobs > 0) {
        cfg.jobs = args.jobs;
        cfg.avar.jobs = args.jobs;
    }
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment configuration file (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", args.seed, "override the configured seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_option("--out-dir", args.out_dir, "override the configured output directory");
    cmd->add_option("--format", args.format, "output format")
        ->check(CLI::IsMember({"csv", "json"}));
    cmd->add_option("--jobs", args.jobs, "worker threads (0 = hardware)");
}

std::ofstream open_out(const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    const std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream os(path);
    if (!os) throw pbef::ConfigError("cannot open '" + path + "'");
    std::cerr << "wrote " << path << "\n";
    return os;
}

int cmd_simulate(const CommonArgs& args) {
    const auto cfg = load(args);
    const auto model = pbef::make_model(cfg.model);
    const auto theta0 = pbef::initial_theta(cfg.model);
    const auto& entry = cfg.schedule.front();
    pbef::SamplingScheme scheme{entry.n, entry.delta, cfg.substeps, cfg.seed, 0};
    const auto path = pbef::simulate_path(model, theta0, scheme);
    auto os = open_out(cfg.out_dir, "path.csv");
    pbef::write_path_csv(path, os);
    return 0;
}

int cmd_estimate(const CommonArgs& args, const std::string& path_file) {
    const auto cfg = load(args);
    const auto model = pbef::make_model(cfg.model);
    const auto theta0 = pbef::initial_theta(cfg.model);
    const auto spec = cfg.predictor();

    pbef::SamplePath path;
    if (!path_file.empty()) {
        path = pbef::read_path_csv(path_file);
        path.scheme.substeps = cfg.substeps;
    } else {
        const auto& entry = cfg.schedule.front();
        path = pbef::simulate_path(model, theta0,
                                   pbef::SamplingScheme{entry.n, entry.delta, cfg.substeps, cfg.seed, 0});
    }

    const pbef::ParamVector theta_init =
        cfg.theta_init.empty() ? theta0 : theta0.with_values(cfg.theta_init);
    const pbef::ParamVector theta_star =
        cfg.theta_star.empty() ? theta_init : theta0.with_values(cfg.theta_star);
    pbef::SolveOptions opts;
    opts.coeff_method = cfg.coeff_method;
    opts.theta_star = theta_star.values;

    pbef::EstimateResult est;
    if (cfg.kind == pbef::EstimatorKind::simple)
        est = pbef::solve_simple(model, path, spec, theta_init, theta_star, opts);
    else
        est = pbef::solve_onelag(model, path, spec, theta_init, opts);

    nlohmann::json j;
    j["model"] = cfg.model.family;
    j["estimator"] = cfg.kind == pbef::EstimatorKind::simple ? "simple" : "onelag";
    j["predictor"] = cfg.predictor_label;
    j["predictor_poly"] = cfg.predictor_poly;
    j["q"] = cfg.predictor_q;
    j["coefficients"] =
        cfg.coeff_method == pbef::CoeffMethod::exact_moments ? "exact_moments" : "expansion_order1";
    for (std::size_t i = 0; i < theta_init.bounds.size(); ++i)
        j["theta_bounds"].push_back({theta_init.bounds[i].lo, theta_init.bounds[i].hi});
    j["solver"] = {{"max_iterations", opts.max_iterations},
                   {"residual_tol", opts.residual_tol},
                   {"step_tol", opts.step_tol},
                   {"cond_limit", opts.cond_limit}};
    j["n"] = path.scheme.n;
    j["delta"] = path.scheme.delta;
    j["theta_hat"] = est.theta_hat.values;
    j["converged"] = est.converged;
    j["fallback_used"] = est.fallback_used;
    j["n_iterations"] = est.n_iterations;
    j["residual_norm"] = est.residual_norm;
    j["jacobian_cond"] = est.jacobian_cond;
    std::cout << j.dump(2) << "\n";
    return est.converged || est.fallback_used ? 0 : 3;
}

int cmd_avar(const CommonArgs& args) {
    const auto cfg = load(args);
    const auto model = pbef::make_model(cfg.model);
    const auto theta0 = pbef::initial_theta(cfg.model);
    const auto spec = cfg.predictor();
    const auto report = cfg.kind == pbef::EstimatorKind::simple
                            ? pbef::avar_simple(model, theta0, spec, cfg.avar)
                            : pbef::avar_onelag(model, theta0, spec, cfg.avar);
    if (args.format == "json") {
        std::cout << pbef::report_to_json(report) << "\n";
    } else {
        pbef::write_components_csv(report, std::cout);
    }
    auto os = open_out(cfg.out_dir, "avar_components.csv");
    pbef::write_components_csv(report, os);
    auto js = open_out(cfg.out_dir, "avar.json");
    js << pbef::report_to_json(report) << "\n";
    return 0;
}

int cmd_study(const CommonArgs& args) {
    const auto cfg = load(args);
    const auto report = pbef::run_estimation_study(cfg);
    const auto files = pbef::emit_report(report, args.format, cfg.out_dir);
    for (const auto& f : files) std::cerr << "wrote " << f << "\n";
    for (const auto& s : report.summaries) {
        std::cout << "schedule " << s.schedule_idx << ": n = " << s.n << ", delta = " << s.delta
                  << ", converged " << s.n_converged << "/" << s.n_total
                  << ", fallback rate " << s.fallback_rate;
        if (s.regime_flag) std::cout << "  [n*delta^3 >= 1]";
        std::cout << "\n";
    }
    return 0;
}

int cmd_check(const CommonArgs& args, const std::string& suite) {
    const auto cfg = load(args);
    std::vector<pbef::CheckRow> rows;
    if (suite == "lln") {
        rows = pbef::run_lln_check(cfg);
    } else {
        const auto spec = cfg.predictor();
        rows = pbef::run_clt_check(cfg, spec.f);
    }
    pbef::write_check_rows_csv(rows, std::cout);
    auto os = open_out(cfg.out_dir, suite + "_check.csv");
    pbef::write_check_rows_csv(rows, os);
    bool all_pass = true;
    for (const auto& r : rows) all_pass = all_pass && r.pass;
    return all_pass ? 0 : 4;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"prediction-based estimating functions for discretely observed ergodic diffusions"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string path_file;
    std::string suite = "lln";

    auto* sim = app.add_subcommand("simulate", "simulate a stationary path and emit path.csv");
    add_common(sim, args);
    auto* est = app.add_subcommand("estimate", "estimate theta from a path (simulated or --path CSV)");
    add_common(est, args);
    est->add_option("--path", path_file, "path CSV to estimate from")->check(CLI::ExistingFile);
    auto* avar = app.add_subcommand("avar", "compute the asymptotic-variance report");
    add_common(avar, args);
    auto* study = app.add_subcommand("study", "run the full replication study");
    add_common(study, args);
    auto* check = app.add_subcommand("check", "run the LLN/CLT verification suites");
    add_common(check, args);
    check->add_option("--suite", suite, "which suite to run")->check(CLI::IsMember({"lln", "clt"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(args);
        if (est->parsed()) return cmd_estimate(args, path_file);
        if (avar->parsed()) return cmd_avar(args);
        if (study->parsed()) return cmd_study(args);
        if (check->parsed()) return cmd_check(args, suite);
    } catch (const pbef::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
