#include <gtest/gtest.h>

#include "actimood/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace actimood::pipeline {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& leaf) {
    const fs::path dir = fs::path(::testing::TempDir()) / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) { return csv::read_file(p.string()); }

TEST(Config, DefaultsMatchTheDocumentedValues) {
    const RunConfig cfg;
    EXPECT_EQ(cfg.epoch_minutes, 5);
    EXPECT_DOUBLE_EQ(cfg.missing_threshold, 0.2);
    EXPECT_EQ(cfg.states, 2);
    EXPECT_EQ(cfg.max_iter, 100);
    EXPECT_DOUBLE_EQ(cfg.tol, 1e-6);
    EXPECT_EQ(cfg.restarts, 3);
    EXPECT_EQ(cfg.lambda_grid_size, 50);
    EXPECT_DOUBLE_EQ(cfg.lambda_min_ratio, 1e-3);
    EXPECT_EQ(cfg.seed, 0u);
    EXPECT_EQ(cfg.tz_offset_minutes, 0);
    EXPECT_EQ(cfg.jobs, 1);
    EXPECT_EQ(cfg.mode, "loo");
    EXPECT_NO_THROW(validate_config(cfg));
}

TEST(Config, RoundTripsThroughItsFileForm) {
    RunConfig cfg;
    cfg.epoch_minutes = 10;
    cfg.missing_threshold = 0.35;
    cfg.max_iter = 17;
    cfg.tol = 2.5e-7;
    cfg.restarts = 5;
    cfg.lambda_grid_size = 21;
    cfg.lambda_min_ratio = 1e-4;
    cfg.seed = 99;
    cfg.tz_offset_minutes = -300;
    cfg.jobs = 4;
    cfg.mode = "prospective";

    std::istringstream in(config_to_string(cfg));
    const RunConfig back = config_from_stream(in);
    EXPECT_EQ(config_to_string(back), config_to_string(cfg));
}

TEST(Config, StreamParsingRules) {
    std::istringstream in("# comment\n\nseed=7\nmode=prospective\n");
    const RunConfig cfg = config_from_stream(in);
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.mode, "prospective");
    EXPECT_EQ(cfg.epoch_minutes, 5);  // untouched default

    std::istringstream bad_key("no_such_key=1\n");
    EXPECT_THROW(config_from_stream(bad_key), csv::ValidationError);
    std::istringstream bad_line("epoch_minutes 5\n");
    EXPECT_THROW(config_from_stream(bad_line), csv::ValidationError);
    std::istringstream bad_int("max_iter=ten\n");
    EXPECT_THROW(config_from_stream(bad_int), csv::ValidationError);

    EXPECT_THROW(config_from_file("/nonexistent/actimood.cfg"), csv::ValidationError);
}

TEST(Config, ValidationRejectsOutOfRangeSettings) {
    auto expect_rejected = [](auto mutate) {
        RunConfig cfg;
        mutate(cfg);
        EXPECT_THROW(validate_config(cfg), csv::ValidationError);
    };
    expect_rejected([](RunConfig& c) { c.epoch_minutes = 7; });
    expect_rejected([](RunConfig& c) { c.missing_threshold = 0.0; });
    expect_rejected([](RunConfig& c) { c.missing_threshold = 1.5; });
    expect_rejected([](RunConfig& c) { c.states = 3; });
    expect_rejected([](RunConfig& c) { c.max_iter = 0; });
    expect_rejected([](RunConfig& c) { c.tol = 0.0; });
    expect_rejected([](RunConfig& c) { c.restarts = 0; });
    expect_rejected([](RunConfig& c) { c.lambda_grid_size = 0; });
    expect_rejected([](RunConfig& c) { c.lambda_min_ratio = 0.0; });
    expect_rejected([](RunConfig& c) { c.jobs = 0; });
    expect_rejected([](RunConfig& c) { c.mode = "bootstrap"; });
}

WeeksFile small_weeks_file() {
    WeeksFile wf;
    wf.participant_id = "p77";
    wf.epoch_minutes = 60;
    wf.tz_offset_minutes = 0;
    wf.missing_threshold = 0.2;
    wf.report.clamped_samples = 3;
    wf.report.rejected_rows = 1;
    wf.report.weeks_produced = 2;
    wf.report.weeks_eligible = 1;

    for (int k = 0; k < 2; ++k) {
        ingest::WeekRecord w;
        w.participant_id = wf.participant_id;
        w.week_start_ms = 1578182400000LL + k * timeutil::kMsPerWeek;
        w.series.start_ms = w.week_start_ms;
        w.series.epoch_minutes = 60;
        for (int t = 0; t < 168; ++t) {
            w.series.values.push_back(-3.0 + 0.01 * t + k);
            w.series.missing.push_back(t % 50 == 0 ? 1 : 0);
        }
        w.missing_fraction = 4.0 / 168.0;
        if (k == 0) {
            w.qids = 9;
            w.eligible = true;
        }
        wf.weeks.push_back(std::move(w));
    }
    return wf;
}

TEST(WeeksFileJson, RoundTripsEveryField) {
    const WeeksFile wf = small_weeks_file();
    const auto j = weeks_to_json(wf);
    EXPECT_EQ(j.at("weeks").at(0).at("ineligible_reason"), nullptr);
    EXPECT_EQ(j.at("weeks").at(1).at("ineligible_reason"), "no label");

    const WeeksFile back = weeks_from_json(j);
    EXPECT_EQ(back.participant_id, wf.participant_id);
    EXPECT_EQ(back.epoch_minutes, wf.epoch_minutes);
    EXPECT_EQ(back.tz_offset_minutes, wf.tz_offset_minutes);
    EXPECT_DOUBLE_EQ(back.missing_threshold, wf.missing_threshold);
    EXPECT_EQ(back.report.clamped_samples, wf.report.clamped_samples);
    EXPECT_EQ(back.report.rejected_rows, wf.report.rejected_rows);
    EXPECT_EQ(back.report.weeks_produced, wf.report.weeks_produced);
    EXPECT_EQ(back.report.weeks_eligible, wf.report.weeks_eligible);
    ASSERT_EQ(back.weeks.size(), wf.weeks.size());
    for (std::size_t i = 0; i < wf.weeks.size(); ++i) {
        EXPECT_EQ(back.weeks[i].participant_id, wf.participant_id);
        EXPECT_EQ(back.weeks[i].week_start_ms, wf.weeks[i].week_start_ms);
        EXPECT_EQ(back.weeks[i].qids, wf.weeks[i].qids);
        EXPECT_EQ(back.weeks[i].eligible, wf.weeks[i].eligible);
        EXPECT_DOUBLE_EQ(back.weeks[i].missing_fraction, wf.weeks[i].missing_fraction);
        EXPECT_EQ(back.weeks[i].series.start_ms, wf.weeks[i].series.start_ms);
        EXPECT_EQ(back.weeks[i].series.values, wf.weeks[i].series.values);
        EXPECT_EQ(back.weeks[i].series.missing, wf.weeks[i].series.missing);
    }

    auto bad = j;
    bad["weeks"][0]["missing"].erase(0);
    EXPECT_THROW(weeks_from_json(bad), csv::ValidationError);
}

TEST(WeeksFileJson, IneligibleReasonNamesTheThresholdBreach) {
    WeeksFile wf = small_weeks_file();
    wf.weeks[1].qids = 12;
    wf.weeks[1].missing_fraction = 0.5;
    const auto j = weeks_to_json(wf);
    EXPECT_EQ(j.at("weeks").at(1).at("ineligible_reason"), "missing fraction above threshold");
}

TEST(CmdFit, RefusesWhenNothingIsEligible) {
    const fs::path dir = fresh_dir("actimood_fit_none");
    WeeksFile wf = small_weeks_file();
    wf.weeks[0].qids.reset();
    wf.weeks[0].eligible = false;
    const fs::path weeks_path = dir / "weeks.json";
    {
        std::ofstream out(weeks_path);
        out << weeks_to_json(wf).dump(2) << "\n";
    }
    RunConfig cfg;
    cfg.epoch_minutes = 60;
    EXPECT_THROW(cmd_fit(weeks_path.string(), cfg, (dir / "models").string()),
                 std::runtime_error);
}

TEST(CmdEvaluate, ExcludesParticipantsBelowTheLabeledWeekFloor) {
    const fs::path dir = fresh_dir("actimood_eval_excl");
    const timeutil::LocalCalendar cal{0};

    std::vector<features::FeatureRow> rows;
    auto add_row = [&](const std::string& pid, int week, std::optional<int> qids) {
        features::FeatureRow r;
        r.participant_id = pid;
        r.week_start_ms = 1578182400000LL + week * timeutil::kMsPerWeek;
        r.qids = qids;
        r.values[0] = 0.05 + 0.01 * week;
        r.values[2] = qids ? *qids / 10.0 : 0.5;
        r.values[21] = 0.8 - 0.02 * week;
        rows.push_back(r);
    };
    for (int w = 0; w < 8; ++w) add_row("p_ok", w, 4 + w);
    for (int w = 0; w < 4; ++w) add_row("p_few", w, 10 + w);

    const fs::path feat_path = dir / "features.csv";
    {
        std::ofstream out(feat_path);
        features::write_features_csv(out, rows, cal);
    }

    RunConfig cfg;
    cfg.lambda_grid_size = 10;
    const Evaluation ev = cmd_evaluate({feat_path.string()}, cfg, (dir / "report.json").string(),
                                       (dir / "predictions.csv").string());
    ASSERT_EQ(ev.reports.size(), 1u);
    EXPECT_EQ(ev.reports[0].participant_id, "p_ok");
    ASSERT_EQ(ev.excluded.size(), 1u);
    EXPECT_EQ(ev.excluded[0].first, "p_few");
    EXPECT_EQ(ev.excluded[0].second, "fewer than 5 labeled weeks");

    const auto j = detail::load_json((dir / "report.json").string());
    EXPECT_EQ(j.at("mode"), "loo");
    EXPECT_EQ(j.at("participants").size(), 1u);
    EXPECT_EQ(j.at("excluded").at(0).at("reason"), "fewer than 5 labeled weeks");
    EXPECT_EQ(j.at("cohort").at("n_participants"), 1);
    EXPECT_TRUE(j.at("cohort").at("rmse").contains("mean"));
    EXPECT_EQ(j.at("cohort").at("rmse").at("n"), 1);
    EXPECT_EQ(j.at("cohort").at("rmse").at("std"), nullptr);  // single report

    std::vector<features::FeatureRow> few_only(rows.end() - 4, rows.end());
    const fs::path few_path = dir / "few.csv";
    {
        std::ofstream out(few_path);
        features::write_features_csv(out, few_only, cal);
    }
    EXPECT_THROW(cmd_evaluate({few_path.string()}, cfg, (dir / "r.json").string(),
                              (dir / "p.csv").string()),
                 std::runtime_error);
}

TEST(EndToEnd, SimulateIngestFitFeaturesEvaluateComposes) {
    const fs::path dir = fresh_dir("actimood_e2e");

    synth::SynthSpec spec = synth::default_spec();
    spec.n_weeks = 6;
    spec.missing_rate = 0.05;
    spec.noise_sigma = 0.5;
    const fs::path spec_path = dir / "spec.json";
    {
        std::ofstream out(spec_path);
        out << synth::spec_to_json(spec).dump(2) << "\n";
    }

    const fs::path accel = dir / "accel.csv";
    const fs::path labels = dir / "labels.csv";
    const auto data = cmd_simulate(spec_path.string(), accel.string(), labels.string());
    ASSERT_EQ(data.weeks.size(), 6u);

    // Identical spec, identical bytes out.
    const fs::path accel2 = dir / "accel2.csv";
    const fs::path labels2 = dir / "labels2.csv";
    cmd_simulate(spec_path.string(), accel2.string(), labels2.string());
    EXPECT_EQ(slurp(accel), slurp(accel2));
    EXPECT_EQ(slurp(labels), slurp(labels2));

    RunConfig cfg;
    cfg.seed = 17;
    cfg.max_iter = 40;
    cfg.tol = 1e-5;
    cfg.restarts = 1;
    cfg.lambda_grid_size = 15;

    const fs::path weeks_path = dir / "weeks.json";
    const WeeksFile wf = cmd_ingest(accel.string(), labels.string(), spec.participant_id, cfg,
                                    weeks_path.string(), (dir / "ingest_report.json").string());
    EXPECT_EQ(wf.report.rejected_rows, 0);
    EXPECT_EQ(wf.report.weeks_produced, 6);
    ASSERT_EQ(wf.weeks.size(), 6u);
    int eligible = 0;
    for (const auto& w : wf.weeks) {
        ASSERT_TRUE(w.qids.has_value());
        eligible += w.eligible ? 1 : 0;
    }
    EXPECT_EQ(eligible, 6);
    EXPECT_EQ(wf.report.weeks_eligible, 6);

    const fs::path models = dir / "models";
    const auto outcomes = cmd_fit(weeks_path.string(), cfg, models.string());
    ASSERT_EQ(outcomes.size(), 6u);
    for (const auto& oc : outcomes) {
        EXPECT_TRUE(oc.fitted);
        EXPECT_TRUE(fs::exists(models / oc.model_file));
        EXPECT_TRUE(fs::exists(models / oc.profile_file));
    }
    ASSERT_TRUE(fs::exists(models / "fit_index.json"));
    const auto index = detail::load_json((models / "fit_index.json").string());
    EXPECT_EQ(index.at("participant_id"), spec.participant_id);
    EXPECT_EQ(index.at("weeks").size(), 6u);
    EXPECT_EQ(index.at("skipped").size(), 0u);

    // Re-fit with more workers into a second directory: byte-identical artifacts.
    RunConfig cfg_jobs = cfg;
    cfg_jobs.jobs = 3;
    const fs::path models2 = dir / "models2";
    cmd_fit(weeks_path.string(), cfg_jobs, models2.string());
    for (const auto& oc : outcomes) {
        EXPECT_EQ(slurp(models / oc.model_file), slurp(models2 / oc.model_file));
        EXPECT_EQ(slurp(models / oc.profile_file), slurp(models2 / oc.profile_file));
    }
    EXPECT_EQ(slurp(models / "fit_index.json"), slurp(models2 / "fit_index.json"));

    const fs::path feat_path = dir / "features.csv";
    const auto rows = cmd_features(weeks_path.string(), models.string(), cfg, feat_path.string());
    ASSERT_EQ(rows.size(), 6u);
    {
        std::istringstream in(slurp(feat_path));
        std::string header;
        ASSERT_TRUE(std::getline(in, header));
        std::string expect = "participant_id,week_start,qids";
        for (const char* n : features::feature_names()) expect += std::string(",") + n;
        EXPECT_EQ(header, expect);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) ++n;
        EXPECT_EQ(n, 6u);
    }

    const Evaluation loo = cmd_evaluate({feat_path.string()}, cfg, (dir / "loo.json").string(),
                                        (dir / "loo_pred.csv").string());
    ASSERT_EQ(loo.reports.size(), 1u);
    EXPECT_EQ(loo.reports[0].mode, "loo");
    EXPECT_EQ(loo.reports[0].n_weeks, 6);
    EXPECT_TRUE(fs::exists(dir / "loo_pred.csv"));

    RunConfig pcfg = cfg;
    pcfg.mode = "prospective";
    const Evaluation prosp = cmd_evaluate({feat_path.string()}, pcfg,
                                          (dir / "prosp.json").string(),
                                          (dir / "prosp_pred.csv").string());
    ASSERT_EQ(prosp.reports.size(), 1u);
    EXPECT_EQ(prosp.reports[0].mode, "prospective");
    EXPECT_EQ(prosp.reports[0].n_weeks, 2);  // 6 weeks: train 4, test 2
}

TEST(CmdIngest, SurfacesCsvDiagnostics) {
    const fs::path dir = fresh_dir("actimood_ingest_bad");
    const fs::path accel = dir / "accel.csv";
    {
        std::ofstream out(accel);
        out << "timestamp,ax_g,ay_g,az_g\n0,0,0,1\n";  // header typo
    }
    const fs::path labels = dir / "labels.csv";
    {
        std::ofstream out(labels);
        out << "participant_id,date,qids\n";
    }
    RunConfig cfg;
    try {
        cmd_ingest(accel.string(), labels.string(), "p01", cfg, (dir / "w.json").string(), "");
        FAIL() << "expected a validation error";
    } catch (const csv::ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("timestamp"), std::string::npos);
    }
    EXPECT_THROW(cmd_ingest((dir / "missing.csv").string(), labels.string(), "p01", cfg,
                            (dir / "w.json").string(), ""),
                 csv::ValidationError);
}

TEST(CmdSimulate, SchemaErrorsNameTheFile) {
    const fs::path dir = fresh_dir("actimood_simulate_bad");
    const fs::path spec = dir / "spec.json";
    auto j = synth::spec_to_json(synth::default_spec());
    j["true_model"].erase("mu");
    {
        std::ofstream out(spec);
        out << j.dump(2) << '\n';
    }
    try {
        cmd_simulate(spec.string(), (dir / "a.csv").string(), (dir / "l.csv").string());
        FAIL() << "expected a validation error";
    } catch (const csv::ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("spec.json"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("mu"), std::string::npos);
    }
}

}  // namespace
}  // namespace actimood::pipeline
