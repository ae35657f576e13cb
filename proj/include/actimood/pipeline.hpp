#ifndef ACTIMOOD_PIPELINE_HPP
#define ACTIMOOD_PIPELINE_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "actimood/csv.hpp"
#include "actimood/features.hpp"
#include "actimood/ingest.hpp"
#include "actimood/regress.hpp"
#include "actimood/rng.hpp"
#include "actimood/synth.hpp"
#include "actimood/timeutil.hpp"
#include "actimood/tvhmm.hpp"

namespace actimood {
namespace pipeline {

struct RunConfig {
    int epoch_minutes = 5;
    double missing_threshold = 0.2;
    int states = 2;  // reserved; only 2 is supported
    int max_iter = 100;
    double tol = 1e-6;
    int restarts = 3;
    int lambda_grid_size = 50;
    double lambda_min_ratio = 1e-3;
    std::uint64_t seed = 0;
    int tz_offset_minutes = 0;
    int jobs = 1;
    std::string mode = "loo";
};

inline void validate_config(const RunConfig& cfg) {
    if (cfg.epoch_minutes <= 0 || 60 % cfg.epoch_minutes != 0)
        throw csv::ValidationError("config: epoch_minutes must divide 60");
    if (!(cfg.missing_threshold > 0.0 && cfg.missing_threshold <= 1.0))
        throw csv::ValidationError("config: missing_threshold must lie in (0, 1]");
    if (cfg.states != 2) throw csv::ValidationError("config: states must be 2");
    if (cfg.max_iter < 1) throw csv::ValidationError("config: max_iter must be >= 1");
    if (!(cfg.tol > 0.0)) throw csv::ValidationError("config: tol must be positive");
    if (cfg.restarts < 1) throw csv::ValidationError("config: restarts must be >= 1");
    if (cfg.lambda_grid_size < 1) throw csv::ValidationError("config: lambda_grid_size must be >= 1");
    if (!(cfg.lambda_min_ratio > 0.0 && cfg.lambda_min_ratio <= 1.0))
        throw csv::ValidationError("config: lambda_min_ratio must lie in (0, 1]");
    if (cfg.jobs < 1) throw csv::ValidationError("config: jobs must be >= 1");
    if (cfg.mode != "loo" && cfg.mode != "prospective")
        throw csv::ValidationError("config: mode must be 'loo' or 'prospective'");
}

// Flat key=value form; writing then reading reproduces the config exactly.
inline std::string config_to_string(const RunConfig& cfg) {
    std::ostringstream out;
    out << "epoch_minutes=" << cfg.epoch_minutes << '\n';
    out << "missing_threshold=" << csv::format_double(cfg.missing_threshold) << '\n';
    out << "states=" << cfg.states << '\n';
    out << "max_iter=" << cfg.max_iter << '\n';
    out << "tol=" << csv::format_double(cfg.tol) << '\n';
    out << "restarts=" << cfg.restarts << '\n';
    out << "lambda_grid_size=" << cfg.lambda_grid_size << '\n';
    out << "lambda_min_ratio=" << csv::format_double(cfg.lambda_min_ratio) << '\n';
    out << "seed=" << cfg.seed << '\n';
    out << "tz_offset_minutes=" << cfg.tz_offset_minutes << '\n';
    out << "jobs=" << cfg.jobs << '\n';
    out << "mode=" << cfg.mode << '\n';
    return out.str();
}

inline void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value,
                              std::size_t row) {
    auto to_int = [&](const std::string& s) { return static_cast<int>(csv::parse_int(s, row, key)); };
    if (key == "epoch_minutes") cfg.epoch_minutes = to_int(value);
    else if (key == "missing_threshold") cfg.missing_threshold = csv::parse_double(value, row, key);
    else if (key == "states") cfg.states = to_int(value);
    else if (key == "max_iter") cfg.max_iter = to_int(value);
    else if (key == "tol") cfg.tol = csv::parse_double(value, row, key);
    else if (key == "restarts") cfg.restarts = to_int(value);
    else if (key == "lambda_grid_size") cfg.lambda_grid_size = to_int(value);
    else if (key == "lambda_min_ratio") cfg.lambda_min_ratio = csv::parse_double(value, row, key);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(csv::parse_int(value, row, key));
    else if (key == "tz_offset_minutes") cfg.tz_offset_minutes = to_int(value);
    else if (key == "jobs") cfg.jobs = to_int(value);
    else if (key == "mode") cfg.mode = value;
    else throw csv::ValidationError("config: unknown key '" + key + "' at line " + std::to_string(row));
}

inline RunConfig config_from_stream(std::istream& in, RunConfig base = {}) {
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        line = csv::strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw csv::ValidationError("config: expected key=value at line " + std::to_string(row));
        apply_config_line(base, line.substr(0, eq), line.substr(eq + 1), row);
    }
    return base;
}

inline RunConfig config_from_file(const std::string& path, RunConfig base = {}) {
    auto in = csv::open_input(path);
    return config_from_stream(in, std::move(base));
}

inline timeutil::LocalCalendar calendar_of(const RunConfig& cfg) {
    return timeutil::LocalCalendar{cfg.tz_offset_minutes};
}

// --- Weeks file ---

struct WeeksFile {
    std::string participant_id;
    int epoch_minutes = 5;
    int tz_offset_minutes = 0;
    double missing_threshold = 0.2;
    ingest::IngestReport report;
    std::vector<ingest::WeekRecord> weeks;
};

inline std::string ineligible_reason(const ingest::WeekRecord& w, double threshold) {
    if (!w.qids) return "no label";
    if (!(w.missing_fraction < threshold)) return "missing fraction above threshold";
    return "";
}

inline nlohmann::ordered_json weeks_to_json(const WeeksFile& wf) {
    const timeutil::LocalCalendar cal{wf.tz_offset_minutes};
    nlohmann::ordered_json j;
    j["participant_id"] = wf.participant_id;
    j["epoch_minutes"] = wf.epoch_minutes;
    j["tz_offset_minutes"] = wf.tz_offset_minutes;
    j["missing_threshold"] = wf.missing_threshold;
    j["report"] = {{"clamped_samples", wf.report.clamped_samples},
                   {"rejected_rows", wf.report.rejected_rows},
                   {"weeks_produced", wf.report.weeks_produced},
                   {"weeks_eligible", wf.report.weeks_eligible}};
    nlohmann::ordered_json weeks = nlohmann::ordered_json::array();
    for (const ingest::WeekRecord& w : wf.weeks) {
        nlohmann::ordered_json wj;
        wj["week_start"] = timeutil::format_local_date(w.week_start_ms, cal);
        wj["qids"] = w.qids ? nlohmann::ordered_json(*w.qids) : nlohmann::ordered_json(nullptr);
        wj["missing_fraction"] = w.missing_fraction;
        wj["eligible"] = w.eligible;
        const std::string reason = ineligible_reason(w, wf.missing_threshold);
        wj["ineligible_reason"] =
            reason.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(reason);
        wj["values"] = w.series.values;
        nlohmann::ordered_json miss = nlohmann::ordered_json::array();
        for (auto m : w.series.missing) miss.push_back(static_cast<int>(m));
        wj["missing"] = miss;
        weeks.push_back(std::move(wj));
    }
    j["weeks"] = weeks;
    return j;
}

inline WeeksFile weeks_from_json(const nlohmann::ordered_json& j) {
    WeeksFile wf;
    wf.participant_id = j.at("participant_id").get<std::string>();
    wf.epoch_minutes = j.at("epoch_minutes").get<int>();
    wf.tz_offset_minutes = j.at("tz_offset_minutes").get<int>();
    wf.missing_threshold = j.at("missing_threshold").get<double>();
    const auto& rep = j.at("report");
    wf.report.clamped_samples = rep.at("clamped_samples").get<std::int64_t>();
    wf.report.rejected_rows = rep.at("rejected_rows").get<std::int64_t>();
    wf.report.weeks_produced = rep.at("weeks_produced").get<std::int64_t>();
    wf.report.weeks_eligible = rep.at("weeks_eligible").get<std::int64_t>();
    const timeutil::LocalCalendar cal{wf.tz_offset_minutes};
    for (const auto& wj : j.at("weeks")) {
        ingest::WeekRecord w;
        w.participant_id = wf.participant_id;
        w.week_start_ms =
            cal.to_utc(timeutil::parse_date(wj.at("week_start").get<std::string>()) *
                       timeutil::kMsPerDay);
        if (!wj.at("qids").is_null()) w.qids = wj.at("qids").get<int>();
        w.missing_fraction = wj.at("missing_fraction").get<double>();
        w.eligible = wj.at("eligible").get<bool>();
        w.series.start_ms = w.week_start_ms;
        w.series.epoch_minutes = wf.epoch_minutes;
        w.series.values = wj.at("values").get<std::vector<double>>();
        for (const auto& m : wj.at("missing"))
            w.series.missing.push_back(static_cast<std::uint8_t>(m.get<int>()));
        if (w.series.missing.size() != w.series.values.size())
            throw csv::ValidationError("weeks file: mask length mismatch for week " +
                                       timeutil::format_local_date(w.week_start_ms, cal));
        wf.weeks.push_back(std::move(w));
    }
    return wf;
}

namespace detail {

inline nlohmann::ordered_json load_json(const std::string& path) {
    auto in = csv::open_input(path);
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw csv::ValidationError(path + ": " + e.what());
    }
    return j;
}

// Loads and converts a JSON file, attaching the path to schema errors.
template <typename Fn>
auto parse_json_file(const std::string& path, Fn&& fn) {
    const nlohmann::ordered_json j = load_json(path);
    try {
        return fn(j);
    } catch (const nlohmann::json::exception& e) {
        throw csv::ValidationError(path + ": " + e.what());
    }
}

inline void save_text(const std::string& path, const std::string& text) {
    auto out = csv::open_output(path);
    out << text;
}

inline void save_json(const std::string& path, const nlohmann::ordered_json& j) {
    save_text(path, j.dump(2) + "\n");
}

}  // namespace detail

// --- Commands ---

inline WeeksFile cmd_ingest(const std::string& accel_path, const std::string& labels_path,
                            const std::string& participant_id, const RunConfig& cfg,
                            const std::string& weeks_out, const std::string& report_out) {
    validate_config(cfg);
    const auto cal = calendar_of(cfg);

    WeeksFile wf;
    wf.participant_id = participant_id;
    wf.epoch_minutes = cfg.epoch_minutes;
    wf.tz_offset_minutes = cfg.tz_offset_minutes;
    wf.missing_threshold = cfg.missing_threshold;

    const auto samples = ingest::read_accel_csv(accel_path, wf.report);
    auto labels = ingest::read_labels_csv(labels_path);

    ingest::AggregateOptions opt;
    opt.epoch_minutes = cfg.epoch_minutes;
    const ingest::EpochSeries series = ingest::epoch_aggregate(samples, cal, opt);
    wf.weeks = ingest::week_segment(series, cal);
    for (auto& w : wf.weeks) w.participant_id = participant_id;
    ingest::attach_labels(wf.weeks, std::move(labels), cal, cfg.missing_threshold);

    wf.report.weeks_produced = static_cast<std::int64_t>(wf.weeks.size());
    for (const auto& w : wf.weeks)
        if (w.eligible) ++wf.report.weeks_eligible;

    detail::save_json(weeks_out, weeks_to_json(wf));
    if (!report_out.empty())
        detail::save_json(report_out, weeks_to_json(wf)["report"]);
    return wf;
}

struct FitOutcome {
    std::string week_start;
    bool fitted = false;
    std::string reason;  // when skipped
    std::string model_file, profile_file;
    bool converged = false;
    int iterations = 0;
    double final_loglik = 0.0;
};

inline std::vector<FitOutcome> cmd_fit(const std::string& weeks_path, const RunConfig& cfg,
                                       const std::string& out_dir) {
    validate_config(cfg);
    const WeeksFile wf = detail::parse_json_file(weeks_path, weeks_from_json);
    const timeutil::LocalCalendar cal{wf.tz_offset_minutes};
    std::filesystem::create_directories(out_dir);

    std::vector<FitOutcome> outcomes(wf.weeks.size());
    std::atomic<std::size_t> cursor{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto run = [&]() {
        for (std::size_t i; (i = cursor.fetch_add(1)) < wf.weeks.size();) {
            const ingest::WeekRecord& w = wf.weeks[i];
            FitOutcome& oc = outcomes[i];
            oc.week_start = timeutil::format_local_date(w.week_start_ms, cal);
            if (!w.eligible) {
                oc.reason = ineligible_reason(w, wf.missing_threshold);
                continue;
            }
            tvhmm::FitConfig fit_cfg;
            fit_cfg.max_iter = cfg.max_iter;
            fit_cfg.tol = cfg.tol;
            fit_cfg.n_restarts = cfg.restarts;
            fit_cfg.covariates.calendar = cal;
            fit_cfg.seed = rng::mix(rng::mix(cfg.seed, rng::hash_string(wf.participant_id)),
                                    static_cast<std::uint64_t>(w.week_start_ms));
            const tvhmm::TvHmmModel model = tvhmm::em_fit(w.series, fit_cfg);
            const tvhmm::DailyProfile profile = tvhmm::profile24(model, wf.epoch_minutes);

            oc.fitted = true;
            oc.converged = model.converged;
            oc.iterations = model.iterations;
            oc.final_loglik = model.fit_log.back();
            oc.model_file = "model_" + wf.participant_id + "_" + oc.week_start + ".json";
            oc.profile_file = "profile_" + wf.participant_id + "_" + oc.week_start + ".csv";
            detail::save_json((std::filesystem::path(out_dir) / oc.model_file).string(),
                              tvhmm::model_to_json(model));
            std::ostringstream pcsv;
            tvhmm::write_profile_csv(pcsv, profile);
            detail::save_text((std::filesystem::path(out_dir) / oc.profile_file).string(),
                              pcsv.str());
        }
    };
    auto worker = [&]() {
        try {
            run();
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    };
    std::vector<std::thread> pool;
    const int jobs = std::min<int>(cfg.jobs, static_cast<int>(wf.weeks.size()) > 0
                                                 ? static_cast<int>(wf.weeks.size())
                                                 : 1);
    for (int k = 1; k < jobs; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);

    bool any = false;
    nlohmann::ordered_json fitted = nlohmann::ordered_json::array();
    nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
    for (const FitOutcome& oc : outcomes) {
        if (oc.fitted) {
            any = true;
            fitted.push_back({{"week_start", oc.week_start},
                              {"model", oc.model_file},
                              {"profile", oc.profile_file},
                              {"converged", oc.converged},
                              {"iterations", oc.iterations},
                              {"final_loglik", oc.final_loglik}});
        } else {
            skipped.push_back({{"week_start", oc.week_start}, {"reason", oc.reason}});
        }
    }
    if (!any) throw std::runtime_error("no eligible weeks to fit");
    nlohmann::ordered_json index;
    index["participant_id"] = wf.participant_id;
    index["weeks"] = fitted;
    index["skipped"] = skipped;
    detail::save_json((std::filesystem::path(out_dir) / "fit_index.json").string(), index);
    return outcomes;
}

inline std::vector<features::FeatureRow> cmd_features(const std::string& weeks_path,
                                                      const std::string& models_dir,
                                                      const RunConfig& cfg,
                                                      const std::string& out_csv) {
    validate_config(cfg);
    const WeeksFile wf = detail::parse_json_file(weeks_path, weeks_from_json);
    const timeutil::LocalCalendar cal{wf.tz_offset_minutes};

    std::vector<features::FeatureRow> rows;
    for (const ingest::WeekRecord& w : wf.weeks) {
        if (!w.eligible) continue;
        const std::string date = timeutil::format_local_date(w.week_start_ms, cal);
        const std::string model_path =
            (std::filesystem::path(models_dir) / ("model_" + wf.participant_id + "_" + date + ".json"))
                .string();
        const tvhmm::TvHmmModel model =
            detail::parse_json_file(model_path, tvhmm::model_from_json);
        const tvhmm::StatePath path = tvhmm::viterbi(w.series, model);
        const tvhmm::DailyProfile profile = tvhmm::profile24(model, wf.epoch_minutes);
        rows.push_back(features::assemble_feature_row(w, model, path, profile));
    }
    features::sort_rows(rows);
    std::ostringstream out;
    features::write_features_csv(out, rows, cal);
    detail::save_text(out_csv, out.str());
    return rows;
}

struct Evaluation {
    std::vector<regress::EvalReport> reports;
    std::vector<std::pair<std::string, std::string>> excluded;  // participant, reason
};

inline nlohmann::ordered_json evaluation_to_json(const Evaluation& ev, const std::string& mode,
                                                 const timeutil::LocalCalendar& cal) {
    nlohmann::ordered_json j;
    j["mode"] = mode;
    nlohmann::ordered_json parts = nlohmann::ordered_json::array();
    for (const auto& rep : ev.reports) parts.push_back(regress::report_to_json(rep, cal));
    j["participants"] = parts;
    nlohmann::ordered_json excl = nlohmann::ordered_json::array();
    for (const auto& [pid, reason] : ev.excluded)
        excl.push_back({{"participant_id", pid}, {"reason", reason}});
    j["excluded"] = excl;

    auto summarize = [&](auto getter) {
        std::vector<double> xs;
        for (const auto& rep : ev.reports) {
            const std::optional<double> v = getter(rep);
            if (v) xs.push_back(*v);
        }
        nlohmann::ordered_json s;
        s["n"] = xs.size();
        if (xs.empty()) {
            s["mean"] = nullptr;
            s["std"] = nullptr;
            return s;
        }
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        s["mean"] = mean;
        if (xs.size() < 2) {
            s["std"] = nullptr;
        } else {
            double ss = 0.0;
            for (double x : xs) ss += (x - mean) * (x - mean);
            s["std"] = std::sqrt(ss / static_cast<double>(xs.size() - 1));
        }
        return s;
    };
    nlohmann::ordered_json cohort;
    cohort["n_participants"] = ev.reports.size();
    cohort["rmse"] = summarize([](const auto& r) { return std::optional<double>(r.rmse); });
    cohort["mae"] = summarize([](const auto& r) { return std::optional<double>(r.mae); });
    cohort["pearson_rho"] = summarize([](const auto& r) { return r.pearson_rho; });
    cohort["accuracy"] = summarize([](const auto& r) { return r.accuracy; });
    cohort["sensitivity"] = summarize([](const auto& r) { return r.sensitivity; });
    cohort["specificity"] = summarize([](const auto& r) { return r.specificity; });
    cohort["mean_active_set"] =
        summarize([](const auto& r) { return std::optional<double>(r.mean_active_set); });
    j["cohort"] = cohort;
    return j;
}

inline Evaluation cmd_evaluate(const std::vector<std::string>& features_paths,
                               const RunConfig& cfg, const std::string& report_out,
                               const std::string& predictions_out) {
    validate_config(cfg);
    const auto cal = calendar_of(cfg);

    std::vector<features::FeatureRow> rows;
    for (const std::string& path : features_paths) {
        auto part = features::read_features_csv(path, cal);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    std::map<std::string, std::vector<features::FeatureRow>> by_participant;
    for (auto& r : rows) by_participant[r.participant_id].push_back(std::move(r));

    Evaluation ev;
    for (auto& [pid, prows] : by_participant) {
        int labeled = 0;
        for (const auto& r : prows)
            if (r.qids) ++labeled;
        if (labeled < regress::kMinLabeledWeeks) {
            ev.excluded.push_back({pid, "fewer than 5 labeled weeks"});
            continue;
        }
        const regress::EvalReport rep =
            cfg.mode == "loo"
                ? regress::loo_evaluate(prows, cfg.lambda_grid_size, cfg.lambda_min_ratio)
                : regress::prospective_evaluate(prows, cfg.lambda_grid_size, cfg.lambda_min_ratio);
        ev.reports.push_back(rep);
    }
    if (ev.reports.empty()) throw std::runtime_error("no participant has enough labeled weeks");

    detail::save_json(report_out, evaluation_to_json(ev, cfg.mode, cal));
    std::ostringstream pred;
    regress::write_predictions_csv(pred, ev.reports, cal);
    detail::save_text(predictions_out, pred.str());
    return ev;
}

inline synth::ParticipantData cmd_simulate(const std::string& spec_path,
                                           const std::string& accel_out,
                                           const std::string& labels_out) {
    const synth::SynthSpec spec = detail::parse_json_file(spec_path, synth::spec_from_json);
    synth::ParticipantData data = synth::simulate_participant(spec);
    const auto& cal = spec.true_model.covariates.calendar;

    std::ostringstream accel;
    synth::write_participant_accel_csv(accel, data.weeks);
    detail::save_text(accel_out, accel.str());

    std::ostringstream labels;
    synth::write_participant_labels_csv(labels, data.weeks, cal);
    detail::save_text(labels_out, labels.str());
    return data;
}

}  // namespace pipeline
}  // namespace actimood

#endif
