#ifndef ACTIMOOD_SYNTH_HPP
#define ACTIMOOD_SYNTH_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "actimood/csv.hpp"
#include "actimood/features.hpp"
#include "actimood/ingest.hpp"
#include "actimood/rng.hpp"
#include "actimood/timeutil.hpp"
#include "actimood/tvhmm.hpp"

namespace actimood {
namespace synth {

using features::FeatureRow;
using ingest::EpochSeries;
using ingest::WeekRecord;
using tvhmm::StatePath;
using tvhmm::TvHmmModel;

constexpr std::uint64_t kBurnStreamBase = 1'000'000;
constexpr int kBurnWeeks = 200;

struct SynthSpec {
    std::string participant_id = "p01";
    std::uint64_t seed = 1;
    int n_weeks = 40;
    int epoch_minutes = 5;
    std::int64_t start_ms = 0;  // local Sunday midnight
    TvHmmModel true_model;
    std::optional<TvHmmModel> alt_model;  // second regime, alternating in blocks
    int regime_block_weeks = 0;
    double missing_rate = 0.0;
    std::array<double, features::kFeatureCount> qids_weights{};
    double qids_intercept = 8.0;
    double noise_sigma = 0.0;
    double missing_threshold = ingest::kDefaultMissingThreshold;
};

inline void validate_spec(const SynthSpec& spec) {
    if (spec.participant_id.empty())
        throw csv::ValidationError("spec: participant_id must be non-empty");
    if (spec.n_weeks < 1) throw csv::ValidationError("spec: n_weeks must be >= 1");
    if (spec.epoch_minutes <= 0 || 60 % spec.epoch_minutes != 0)
        throw csv::ValidationError("spec: epoch_minutes must divide 60");
    if (!(spec.missing_rate >= 0.0 && spec.missing_rate < 1.0))
        throw csv::ValidationError("spec: missing_rate must lie in [0, 1)");
    if (!(spec.noise_sigma >= 0.0))
        throw csv::ValidationError("spec: noise_sigma must be >= 0");
    const auto& cal = spec.true_model.covariates.calendar;
    if (timeutil::prev_sunday_midnight(spec.start_ms, cal) != spec.start_ms)
        throw csv::ValidationError("spec: start_date must be a Sunday");
    if (spec.regime_block_weeks < 0)
        throw csv::ValidationError("spec: regime_block_weeks must be >= 0");
    if (spec.alt_model && spec.regime_block_weeks == 0)
        throw csv::ValidationError("spec: alt_model requires regime_block_weeks > 0");
    for (const TvHmmModel* m : {&spec.true_model, spec.alt_model ? &*spec.alt_model : nullptr}) {
        if (!m) continue;
        if (!(std::abs(m->pi[0] + m->pi[1] - 1.0) <= 1e-12) || m->pi[0] < 0.0 || m->pi[1] < 0.0)
            throw csv::ValidationError("spec: model pi must be a distribution");
        if (!(m->emissions.var[0] > 0.0) || !(m->emissions.var[1] > 0.0))
            throw csv::ValidationError("spec: model variances must be positive");
    }
}

inline bool uses_alt_model(const SynthSpec& spec, int week) {
    return spec.alt_model && spec.regime_block_weeks > 0 &&
           (week / spec.regime_block_weeks) % 2 == 1;
}

inline const TvHmmModel& model_for_week(const SynthSpec& spec, int week) {
    return uses_alt_model(spec, week) ? *spec.alt_model : spec.true_model;
}

namespace detail {

// One week of states and observations. Per epoch the stream yields, in
// order: state uniform, two normal uniforms, missing uniform. Drawn values
// are clamped so the emitted sample pairs stay inside the device range.
inline std::pair<EpochSeries, StatePath> simulate_series(const SynthSpec& spec,
                                                         const TvHmmModel& model,
                                                         std::int64_t week_start_ms,
                                                         std::uint64_t stream_index) {
    const std::size_t n = static_cast<std::size_t>(7 * 24 * 60 / spec.epoch_minutes);
    rng::Stream rs(rng::mix(spec.seed, stream_index));

    EpochSeries s;
    s.start_ms = week_start_ms;
    s.epoch_minutes = spec.epoch_minutes;
    s.values.assign(n, 0.0);
    s.missing.assign(n, 0);
    StatePath path;
    path.states.assign(n, 0);

    const double vmin = std::log(ingest::kDefaultLogEps);
    int state = 0;
    for (std::size_t t = 0; t < n; ++t) {
        if (t == 0) {
            state = rs.uniform() < model.pi[0] ? 0 : 1;
        } else {
            const Eigen::Matrix2d a =
                tvhmm::transition_matrix(model.coeffs, model.covariates.at_epoch(s, t - 1));
            state = rs.uniform() < a(state, 0) ? 0 : 1;
        }
        path.states[t] = state;
        const double v = rs.normal(model.emissions.mean[state],
                                   std::sqrt(model.emissions.var[state]));
        s.values[t] = std::clamp(v, vmin, 0.0);
        s.missing[t] = rs.uniform() < spec.missing_rate ? 1 : 0;
    }
    // Anchor the week edges so aggregation spans every simulated week fully.
    s.missing.front() = 0;
    s.missing.back() = 0;
    for (std::size_t t = 0; t < n; ++t)
        if (s.missing[t]) s.values[t] = 0.0;
    return {std::move(s), std::move(path)};
}

}  // namespace detail

inline std::pair<EpochSeries, StatePath> simulate_week(const SynthSpec& spec, int week_index) {
    validate_spec(spec);
    if (week_index < 0) throw std::invalid_argument("negative week index");
    return detail::simulate_series(spec, model_for_week(spec, week_index),
                                   spec.start_ms + week_index * timeutil::kMsPerWeek,
                                   static_cast<std::uint64_t>(week_index));
}

struct ParticipantData {
    std::vector<WeekRecord> weeks;
    std::vector<StatePath> paths;     // generating path per week
    std::vector<FeatureRow> rows;     // features under the generating model, qids attached
};

namespace detail {

inline FeatureRow week_features(const TvHmmModel& model, const WeekRecord& rec,
                                const tvhmm::DailyProfile& profile) {
    const StatePath decoded = tvhmm::viterbi(rec.series, model);
    return features::assemble_feature_row(rec, model, decoded, profile);
}

inline WeekRecord make_record(const SynthSpec& spec, EpochSeries series) {
    WeekRecord rec;
    rec.participant_id = spec.participant_id;
    rec.series = std::move(series);
    rec.week_start_ms = rec.series.start_ms;
    std::size_t miss = 0;
    for (auto m : rec.series.missing) miss += m ? 1 : 0;
    rec.missing_fraction = static_cast<double>(miss) / static_cast<double>(rec.series.size());
    return rec;
}

}  // namespace detail

// Simulates every week, runs the feature pipeline under the generating model,
// and assigns qids = round(clamp(intercept + w·z + noise, 0, 27)) where z is
// the feature vector standardized against a fixed burn-in simulation.
inline ParticipantData simulate_participant(const SynthSpec& spec) {
    validate_spec(spec);

    const tvhmm::DailyProfile profile_true = tvhmm::profile24(spec.true_model, spec.epoch_minutes);
    tvhmm::DailyProfile profile_alt;
    if (spec.alt_model) profile_alt = tvhmm::profile24(*spec.alt_model, spec.epoch_minutes);
    auto profile_of = [&](bool alt) -> const tvhmm::DailyProfile& {
        return alt ? profile_alt : profile_true;
    };

    // Burn-in pass fixes the standardization of each feature.
    std::array<double, features::kFeatureCount> burn_mean{}, burn_sd{};
    {
        std::array<std::vector<double>, features::kFeatureCount> samples;
        for (int k = 0; k < kBurnWeeks; ++k) {
            const bool alt = uses_alt_model(spec, k);
            const TvHmmModel& model = alt ? *spec.alt_model : spec.true_model;
            auto [series, path] = detail::simulate_series(
                spec, model, spec.start_ms + k * timeutil::kMsPerWeek, kBurnStreamBase + k);
            const WeekRecord rec = detail::make_record(spec, std::move(series));
            const FeatureRow row = detail::week_features(model, rec, profile_of(alt));
            for (int f = 0; f < features::kFeatureCount; ++f)
                if (row.values[f]) samples[f].push_back(*row.values[f]);
        }
        for (int f = 0; f < features::kFeatureCount; ++f) {
            if (samples[f].empty()) continue;
            double m = 0.0;
            for (double v : samples[f]) m += v;
            m /= static_cast<double>(samples[f].size());
            double ss = 0.0;
            for (double v : samples[f]) ss += (v - m) * (v - m);
            burn_mean[f] = m;
            burn_sd[f] = std::sqrt(ss / static_cast<double>(samples[f].size()));
        }
    }

    rng::Stream label_noise(rng::mix(spec.seed, rng::hash_string("labels")));
    ParticipantData out;
    for (int w = 0; w < spec.n_weeks; ++w) {
        const bool alt = uses_alt_model(spec, w);
        const TvHmmModel& model = alt ? *spec.alt_model : spec.true_model;
        auto [series, path] = detail::simulate_series(
            spec, model, spec.start_ms + w * timeutil::kMsPerWeek, static_cast<std::uint64_t>(w));
        WeekRecord rec = detail::make_record(spec, std::move(series));
        FeatureRow row = detail::week_features(model, rec, profile_of(alt));

        double score = spec.qids_intercept;
        for (int f = 0; f < features::kFeatureCount; ++f) {
            if (spec.qids_weights[f] == 0.0 || !(burn_sd[f] > 0.0) || !row.values[f]) continue;
            score += spec.qids_weights[f] * (*row.values[f] - burn_mean[f]) / burn_sd[f];
        }
        score += label_noise.normal(0.0, spec.noise_sigma);
        const double clamped = std::clamp(score, 0.0, 27.0);
        const int qids = static_cast<int>(std::floor(clamped + 0.5));
        rec.qids = qids;
        rec.eligible = rec.missing_fraction < spec.missing_threshold;
        row.qids = rec.qids;

        out.weeks.push_back(std::move(rec));
        out.paths.push_back(std::move(path));
        out.rows.push_back(std::move(row));
    }
    return out;
}

inline std::vector<FeatureRow> eligible_rows(const ParticipantData& data) {
    std::vector<FeatureRow> rows;
    for (std::size_t i = 0; i < data.weeks.size(); ++i)
        if (data.weeks[i].eligible) rows.push_back(data.rows[i]);
    return rows;
}

// --- File emission (formats consumed by ingest) ---

// Each observed epoch becomes two samples half an epoch apart whose
// magnitudes average 1 with population spread exp(v) - eps, so aggregation
// reproduces the generated log-activity value.
inline void write_participant_accel_csv(std::ostream& out,
                                        std::span<const WeekRecord> weeks) {
    out << "timestamp_ms,ax_g,ay_g,az_g\n";
    for (const WeekRecord& rec : weeks) {
        const std::int64_t epoch_ms = rec.series.epoch_ms();
        for (std::size_t t = 0; t < rec.series.size(); ++t) {
            if (rec.series.missing[t]) continue;
            const double d = std::exp(rec.series.values[t]) - ingest::kDefaultLogEps;
            const std::int64_t t0 = rec.series.start_ms + static_cast<std::int64_t>(t) * epoch_ms;
            out << t0 << ",0,0," << csv::format_double(1.0 - d) << '\n';
            out << t0 + epoch_ms / 2 << ",0,0," << csv::format_double(1.0 + d) << '\n';
        }
    }
}

inline void write_participant_labels_csv(std::ostream& out, std::span<const WeekRecord> weeks,
                                         const timeutil::LocalCalendar& cal) {
    std::vector<ingest::LabelPoint> labels;
    for (const WeekRecord& rec : weeks) {
        if (!rec.qids) continue;
        labels.push_back({rec.participant_id, timeutil::local_day_index(rec.week_start_ms, cal),
                          *rec.qids});
    }
    ingest::write_labels_csv(out, labels, cal);
}

// --- Spec file ---

inline nlohmann::ordered_json spec_to_json(const SynthSpec& spec) {
    const auto& cal = spec.true_model.covariates.calendar;
    nlohmann::ordered_json j;
    j["participant_id"] = spec.participant_id;
    j["seed"] = spec.seed;
    j["n_weeks"] = spec.n_weeks;
    j["epoch_minutes"] = spec.epoch_minutes;
    j["start_date"] = timeutil::format_local_date(spec.start_ms, cal);
    j["tz_offset_minutes"] = cal.tz_offset_minutes;
    j["missing_rate"] = spec.missing_rate;
    j["missing_threshold"] = spec.missing_threshold;
    j["true_model"] = tvhmm::model_to_json(spec.true_model);
    j["alt_model"] = spec.alt_model ? tvhmm::model_to_json(*spec.alt_model)
                                    : nlohmann::ordered_json(nullptr);
    j["regime_block_weeks"] = spec.regime_block_weeks;
    j["qids_intercept"] = spec.qids_intercept;
    nlohmann::ordered_json weights = nlohmann::ordered_json::object();
    for (int f = 0; f < features::kFeatureCount; ++f)
        if (spec.qids_weights[f] != 0.0) weights[features::feature_names()[f]] = spec.qids_weights[f];
    j["qids_weights"] = weights;
    j["noise_sigma"] = spec.noise_sigma;
    return j;
}

inline SynthSpec spec_from_json(const nlohmann::ordered_json& j) {
    SynthSpec spec;
    spec.participant_id = j.at("participant_id").get<std::string>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.n_weeks = j.at("n_weeks").get<int>();
    spec.epoch_minutes = j.at("epoch_minutes").get<int>();
    spec.missing_rate = j.at("missing_rate").get<double>();
    if (j.contains("missing_threshold"))
        spec.missing_threshold = j.at("missing_threshold").get<double>();
    spec.true_model = tvhmm::model_from_json(j.at("true_model"));
    const int tz = j.at("tz_offset_minutes").get<int>();
    spec.true_model.covariates.calendar.tz_offset_minutes = tz;
    if (j.contains("alt_model") && !j.at("alt_model").is_null()) {
        spec.alt_model = tvhmm::model_from_json(j.at("alt_model"));
        spec.alt_model->covariates.calendar.tz_offset_minutes = tz;
    }
    spec.regime_block_weeks = j.value("regime_block_weeks", 0);
    spec.qids_intercept = j.at("qids_intercept").get<double>();
    spec.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("qids_weights")) {
        for (const auto& [name, value] : j.at("qids_weights").items()) {
            bool known = false;
            for (int f = 0; f < features::kFeatureCount; ++f)
                if (name == features::feature_names()[f]) {
                    spec.qids_weights[f] = value.get<double>();
                    known = true;
                }
            if (!known) throw csv::ValidationError("spec: unknown feature in qids_weights: " + name);
        }
    }
    const timeutil::LocalCalendar cal{tz};
    spec.start_ms = cal.to_utc(timeutil::parse_date(j.at("start_date").get<std::string>()) *
                               timeutil::kMsPerDay);
    validate_spec(spec);
    return spec;
}

// A regular participant: strong daily rhythm, mild noise, 10% missing data.
inline SynthSpec default_spec() {
    SynthSpec spec;
    spec.seed = 1;
    spec.n_weeks = 40;
    spec.missing_rate = 0.1;
    spec.start_ms = 1578182400000;  // 2020-01-05, a Sunday, UTC calendar

    TvHmmModel& m = spec.true_model;
    m.pi = {0.9, 0.1};
    m.emissions.mean = {-5.28, -2.2};
    m.emissions.var = {0.36, 0.49};
    m.coeffs.c0(0, 0) = 1.5;
    m.coeffs.c1_cos(0, 0) = 1.5;
    m.coeffs.c0(1, 0) = -1.7;
    m.coeffs.c1_cos(1, 0) = 1.3;

    spec.qids_intercept = 8.0;
    for (int f = 0; f < features::kFeatureCount; ++f)
        if (std::string(features::feature_names()[f]) == "rhythm_index")
            spec.qids_weights[f] = -4.0;
    spec.noise_sigma = 1.0;
    return spec;
}

}  // namespace synth
}  // namespace actimood

#endif
