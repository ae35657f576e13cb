#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "actimood/pipeline.hpp"

namespace {

using actimood::pipeline::RunConfig;

struct ConfigFlags {
    std::string config_path;
    RunConfig values;
};

void add_config_options(CLI::App* sub, ConfigFlags& f) {
    sub->add_option("--config", f.config_path, "config file (key=value lines)");
    sub->add_option("--epoch-minutes", f.values.epoch_minutes, "epoch length, must divide 60");
    sub->add_option("--missing-threshold", f.values.missing_threshold,
                    "max missing fraction for an eligible week");
    sub->add_option("--states", f.values.states, "number of hidden states (fixed at 2)");
    sub->add_option("--max-iter", f.values.max_iter, "EM iteration cap");
    sub->add_option("--tol", f.values.tol, "EM relative log-likelihood tolerance");
    sub->add_option("--restarts", f.values.restarts, "EM restarts");
    sub->add_option("--lambda-grid-size", f.values.lambda_grid_size, "lasso grid size");
    sub->add_option("--lambda-min-ratio", f.values.lambda_min_ratio,
                    "smallest lambda as a fraction of lambda_max");
    sub->add_option("--seed", f.values.seed, "random seed");
    sub->add_option("--tz-offset-minutes", f.values.tz_offset_minutes,
                    "local timezone offset from UTC");
    sub->add_option("--jobs", f.values.jobs, "worker threads");
    sub->add_option("--mode", f.values.mode, "evaluation mode: loo or prospective");
}

// Precedence: explicit flags over config file over defaults.
RunConfig resolve_config(CLI::App* sub, const ConfigFlags& f) {
    RunConfig cfg;
    if (!f.config_path.empty()) cfg = actimood::pipeline::config_from_file(f.config_path, cfg);
    if (sub->count("--epoch-minutes")) cfg.epoch_minutes = f.values.epoch_minutes;
    if (sub->count("--missing-threshold")) cfg.missing_threshold = f.values.missing_threshold;
    if (sub->count("--states")) cfg.states = f.values.states;
    if (sub->count("--max-iter")) cfg.max_iter = f.values.max_iter;
    if (sub->count("--tol")) cfg.tol = f.values.tol;
    if (sub->count("--restarts")) cfg.restarts = f.values.restarts;
    if (sub->count("--lambda-grid-size")) cfg.lambda_grid_size = f.values.lambda_grid_size;
    if (sub->count("--lambda-min-ratio")) cfg.lambda_min_ratio = f.values.lambda_min_ratio;
    if (sub->count("--seed")) cfg.seed = f.values.seed;
    if (sub->count("--tz-offset-minutes")) cfg.tz_offset_minutes = f.values.tz_offset_minutes;
    if (sub->count("--jobs")) cfg.jobs = f.values.jobs;
    if (sub->count("--mode")) cfg.mode = f.values.mode;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"actimood: weekly circadian features and mood prediction from accelerometry"};
    app.require_subcommand(1);

    auto* sim = app.add_subcommand("simulate", "generate synthetic accelerometer and label files");
    ConfigFlags sim_cfg;
    std::string sim_spec, sim_accel, sim_labels;
    sim->add_option("--spec", sim_spec, "synthetic participant spec (JSON)")->required();
    sim->add_option("--out-accel", sim_accel, "output accelerometer CSV")->required();
    sim->add_option("--out-labels", sim_labels, "output labels CSV")->required();
    add_config_options(sim, sim_cfg);

    auto* ing = app.add_subcommand("ingest", "aggregate raw samples into labeled weeks");
    ConfigFlags ing_cfg;
    std::string ing_accel, ing_labels, ing_participant, ing_weeks, ing_report;
    ing->add_option("--accel", ing_accel, "accelerometer CSV")->required();
    ing->add_option("--labels", ing_labels, "labels CSV")->required();
    ing->add_option("--participant", ing_participant, "participant id")->required();
    ing->add_option("--weeks-out", ing_weeks, "output weeks JSON")->required();
    ing->add_option("--report-out", ing_report, "output ingest report JSON");
    add_config_options(ing, ing_cfg);

    auto* fit = app.add_subcommand("fit", "fit one model per eligible week");
    ConfigFlags fit_cfg;
    std::string fit_weeks, fit_out;
    fit->add_option("--weeks", fit_weeks, "weeks JSON from ingest")->required();
    fit->add_option("--out-dir", fit_out, "output directory for models and profiles")->required();
    add_config_options(fit, fit_cfg);

    auto* fea = app.add_subcommand("features", "compute the weekly feature table");
    ConfigFlags fea_cfg;
    std::string fea_weeks, fea_models, fea_out;
    fea->add_option("--weeks", fea_weeks, "weeks JSON from ingest")->required();
    fea->add_option("--models-dir", fea_models, "directory produced by fit")->required();
    fea->add_option("--out", fea_out, "output features CSV")->required();
    add_config_options(fea, fea_cfg);

    auto* eva = app.add_subcommand("evaluate", "per-participant regression evaluation");
    ConfigFlags eva_cfg;
    std::vector<std::string> eva_features;
    std::string eva_report, eva_pred;
    eva->add_option("--features", eva_features, "features CSV (repeatable)")->required();
    eva->add_option("--report-out", eva_report, "output evaluation JSON")->required();
    eva->add_option("--predictions-out", eva_pred, "output predictions CSV")->required();
    add_config_options(eva, eva_cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sim->parsed()) {
            actimood::pipeline::cmd_simulate(sim_spec, sim_accel, sim_labels);
        } else if (ing->parsed()) {
            actimood::pipeline::cmd_ingest(ing_accel, ing_labels, ing_participant,
                                           resolve_config(ing, ing_cfg), ing_weeks, ing_report);
        } else if (fit->parsed()) {
            actimood::pipeline::cmd_fit(fit_weeks, resolve_config(fit, fit_cfg), fit_out);
        } else if (fea->parsed()) {
            actimood::pipeline::cmd_features(fea_weeks, fea_models, resolve_config(fea, fea_cfg),
                                             fea_out);
        } else if (eva->parsed()) {
            actimood::pipeline::cmd_evaluate(eva_features, resolve_config(eva, eva_cfg), eva_report,
                                             eva_pred);
        }
        return 0;
    } catch (const actimood::csv::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
