#include "pbef/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace pbef {

namespace {

std::vector<double> predictor_from_name(const std::string& name) {
    if (name == "x") return {0.0, 1.0};
    if (name == "x2" || name == "x^2") return {0.0, 0.0, 1.0};
    if (name == "x3" || name == "x^3") return {0.0, 0.0, 0.0, 1.0};
    throw ConfigError("unknown predictor '" + name + "' (use x, x2, x3 or a poly array)");
}

} // namespace

void ExperimentConfig::validate() const {
    if (replications < 1) throw ConfigError("ExperimentConfig: replications must be >= 1");
    if (schedule.empty()) throw ConfigError("ExperimentConfig: schedule must not be empty");
    for (const auto& s : schedule) {
        if (s.n < 1) throw ConfigError("ExperimentConfig: schedule entry needs n >= 1");
        if (!(s.delta > 0.0)) throw ConfigError("ExperimentConfig: schedule entry needs delta > 0");
    }
    if (predictor_q < 0) throw ConfigError("ExperimentConfig: predictor q must be >= 0");
    if (kind == EstimatorKind::simple && predictor_q != 0)
        throw ConfigError("ExperimentConfig: the simple estimator uses q = 0");
    if (kind == EstimatorKind::onelag && predictor_q != 1)
        throw ConfigError("ExperimentConfig: the 1-lag estimator uses q = 1");
}

PredictorSpec ExperimentConfig::predictor() const {
    PredictorSpec spec;
    spec.f = SmoothFunction::polynomial(predictor_poly);
    spec.q = predictor_q;
    spec.label = predictor_label;
    return spec;
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        const auto& jm = j.at("model");
        cfg.model.family = jm.at("family").get<std::string>();
        for (const auto& [k, v] : jm.at("params").items()) cfg.model.params[k] = v.get<double>();
        if (jm.contains("free")) cfg.model.free = jm["free"].get<std::vector<std::string>>();
        if (jm.contains("bounds"))
            for (const auto& [k, v] : jm["bounds"].items())
                cfg.model.bounds[k] = Interval{v.at(0).get<double>(), v.at(1).get<double>()};

        if (j.contains("predictor")) {
            const auto& jp = j["predictor"];
            if (jp.contains("f")) {
                cfg.predictor_label = jp["f"].get<std::string>();
                cfg.predictor_poly = predictor_from_name(cfg.predictor_label);
            }
            if (jp.contains("poly")) {
                cfg.predictor_poly = jp["poly"].get<std::vector<double>>();
                cfg.predictor_label = "poly";
            }
            if (jp.contains("q")) cfg.predictor_q = jp["q"].get<int>();
        }
        if (j.contains("estimator")) {
            const std::string k = j["estimator"].get<std::string>();
            if (k == "simple") cfg.kind = EstimatorKind::simple;
            else if (k == "onelag") cfg.kind = EstimatorKind::onelag;
            else throw ConfigError("estimator must be 'simple' or 'onelag'");
        }
        if (j.contains("coefficients")) {
            const std::string c = j["coefficients"].get<std::string>();
            if (c == "exact_moments" || c == "exact") cfg.coeff_method = CoeffMethod::exact_moments;
            else if (c == "expansion_order1" || c == "expansion")
                cfg.coeff_method = CoeffMethod::expansion_order1;
            else throw ConfigError("coefficients must be 'exact_moments' or 'expansion_order1'");
        }
        for (const auto& js : j.at("schedule")) {
            ScheduleEntry e;
            e.n = js.at("n").get<std::size_t>();
            e.delta = js.at("delta").get<double>();
            cfg.schedule.push_back(e);
        }
        if (j.contains("replications")) cfg.replications = j["replications"].get<std::size_t>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("substeps")) cfg.substeps = j["substeps"].get<int>();
        if (j.contains("jobs")) cfg.jobs = j["jobs"].get<int>();
        if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
        if (j.contains("theta_init")) cfg.theta_init = j["theta_init"].get<std::vector<double>>();
        if (j.contains("theta_star")) cfg.theta_star = j["theta_star"].get<std::vector<double>>();
        if (j.contains("avar")) {
            const auto& ja = j["avar"];
            if (ja.contains("estimator")) {
                const std::string e = ja["estimator"].get<std::string>();
                if (e == "exp_time") cfg.avar.estimator = PotentialEstimator::exp_time;
                else if (e == "grid_quadrature" || e == "grid")
                    cfg.avar.estimator = PotentialEstimator::grid_quadrature;
                else throw ConfigError("avar estimator must be 'exp_time' or 'grid_quadrature'");
            }
            if (ja.contains("K")) cfg.avar.K = ja["K"].get<int>();
            if (ja.contains("gamma")) cfg.avar.gamma = ja["gamma"].get<double>();
            if (ja.contains("t_max")) cfg.avar.t_max = ja["t_max"].get<double>();
            if (ja.contains("substeps_per_unit"))
                cfg.avar.substeps_per_unit = ja["substeps_per_unit"].get<double>();
            if (ja.contains("seed")) cfg.avar.seed = ja["seed"].get<std::uint64_t>();
        }
        cfg.avar.jobs = cfg.jobs;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_experiment_config(buf.str());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["model"]["family"] = cfg.model.family;
    for (const auto& [k, v] : cfg.model.params) j["model"]["params"][k] = v;
    if (!cfg.model.free.empty()) j["model"]["free"] = cfg.model.free;
    for (const auto& [k, v] : cfg.model.bounds) j["model"]["bounds"][k] = {v.lo, v.hi};
    j["predictor"]["poly"] = cfg.predictor_poly;
    j["predictor"]["q"] = cfg.predictor_q;
    j["estimator"] = cfg.kind == EstimatorKind::simple ? "simple" : "onelag";
    j["coefficients"] =
        cfg.coeff_method == CoeffMethod::exact_moments ? "exact_moments" : "expansion_order1";
    j["schedule"] = nlohmann::json::array();
    for (const auto& s : cfg.schedule) j["schedule"].push_back({{"n", s.n}, {"delta", s.delta}});
    j["replications"] = cfg.replications;
    j["seed"] = cfg.seed;
    j["substeps"] = cfg.substeps;
    j["jobs"] = cfg.jobs;
    j["out_dir"] = cfg.out_dir;
    if (!cfg.theta_init.empty()) j["theta_init"] = cfg.theta_init;
    if (!cfg.theta_star.empty()) j["theta_star"] = cfg.theta_star;
    j["avar"]["estimator"] =
        cfg.avar.estimator == PotentialEstimator::exp_time ? "exp_time" : "grid_quadrature";
    j["avar"]["K"] = cfg.avar.K;
    j["avar"]["gamma"] = cfg.avar.gamma;
    j["avar"]["t_max"] = cfg.avar.t_max;
    j["avar"]["substeps_per_unit"] = cfg.avar.substeps_per_unit;
    j["avar"]["seed"] = cfg.avar.seed;
    return j.dump(2);
}

} // namespace pbef
