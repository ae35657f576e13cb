#ifndef ACTIMOOD_FEATURES_HPP
#define ACTIMOOD_FEATURES_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "actimood/csv.hpp"
#include "actimood/ingest.hpp"
#include "actimood/timeutil.hpp"
#include "actimood/tvhmm.hpp"

namespace actimood {
namespace features {

using ingest::EpochSeries;
using ingest::WeekRecord;
using tvhmm::DailyProfile;
using tvhmm::StatePath;
using tvhmm::TvHmmModel;

constexpr int kFeatureCount = 22;

inline const std::array<const char*, kFeatureCount>& feature_names() {
    static const std::array<const char*, kFeatureCount> names = {
        "L5", "L5_time", "M10", "M10_time", "relative_amplitude",
        "sleep_duration_mean", "sleep_duration_std", "sleep_onset_mean", "sleep_onset_std",
        "sleep_offset_mean", "sleep_offset_std", "inactive_bouts_mean", "inactive_bouts_std",
        "inactive_duration", "inactive_onset", "inactive_offset", "inactive_area",
        "max_p_inactive", "max_p_inactive_time", "max_p_active", "max_p_active_time",
        "rhythm_index"};
    return names;
}

struct FeatureRow {
    std::string participant_id;
    std::int64_t week_start_ms = 0;
    std::optional<int> qids;
    std::array<std::optional<double>, kFeatureCount> values;
};

struct TraditionalFeatures {
    bool available = false;
    double l5 = 0.0, l5_time = 0.0;
    double m10 = 0.0, m10_time = 0.0;
    double relative_amplitude = 0.0;
};

struct ViterbiFeatures {
    bool available = false;
    double sleep_duration_mean = 0.0, sleep_duration_std = 0.0;
    double sleep_onset_mean = 0.0, sleep_onset_std = 0.0;
    double sleep_offset_mean = 0.0, sleep_offset_std = 0.0;
    double inactive_bouts_mean = 0.0, inactive_bouts_std = 0.0;
    int windows_used = 0;
    int windows_skipped = 0;
};

struct ProfileFeatures {
    std::optional<double> inactive_duration, inactive_onset, inactive_offset, inactive_area;
    double max_p_inactive = 0.0, max_p_inactive_time = 0.0;
    double max_p_active = 0.0, max_p_active_time = 0.0;
    double rhythm_index = 0.0;
};

namespace detail {

inline void check_week_length(std::size_t n, int epoch_minutes) {
    if (n * static_cast<std::size_t>(epoch_minutes) != 7u * 24u * 60u)
        throw std::invalid_argument("expected a week-long series");
}

inline double population_std(std::span<const double> xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

inline double mean_of(std::span<const double> xs) {
    double m = 0.0;
    for (double x : xs) m += x;
    return m / static_cast<double>(xs.size());
}

}  // namespace detail

// Five traditional circadian measures on the day-averaged activity curve.
// `series.values` must already be on the nonnegative activity scale.
inline TraditionalFeatures traditional_features(const EpochSeries& series) {
    detail::check_week_length(series.size(), series.epoch_minutes);
    const std::size_t per_day = static_cast<std::size_t>(24 * 60 / series.epoch_minutes);

    std::vector<double> curve(per_day, 0.0);
    std::vector<int> count(per_day, 0);
    for (std::size_t t = 0; t < series.size(); ++t) {
        if (series.missing[t]) continue;
        curve[t % per_day] += series.values[t];
        ++count[t % per_day];
    }
    TraditionalFeatures out;
    for (std::size_t g = 0; g < per_day; ++g) {
        if (count[g] == 0) return out;  // unavailable
        curve[g] /= count[g];
    }

    auto window_mean = [&](std::size_t start, std::size_t len) {
        double s = 0.0;
        for (std::size_t k = 0; k < len; ++k) s += curve[(start + k) % per_day];
        return s / static_cast<double>(len);
    };
    const std::size_t w5 = static_cast<std::size_t>(5 * 60 / series.epoch_minutes);
    const std::size_t w10 = static_cast<std::size_t>(10 * 60 / series.epoch_minutes);

    std::size_t l5_at = 0, m10_at = 0;
    double l5 = window_mean(0, w5), m10 = window_mean(0, w10);
    for (std::size_t s = 1; s < per_day; ++s) {
        const double a = window_mean(s, w5);
        if (a < l5) { l5 = a; l5_at = s; }
        const double b = window_mean(s, w10);
        if (b > m10) { m10 = b; m10_at = s; }
    }

    out.available = true;
    out.l5 = l5;
    out.m10 = m10;
    out.l5_time = static_cast<double>(l5_at) * series.epoch_minutes / 60.0;
    out.m10_time = static_cast<double>(m10_at) * series.epoch_minutes / 60.0;
    out.relative_amplitude = (m10 + l5) > 0.0 ? (m10 - l5) / (m10 + l5) : 0.0;
    return out;
}

// Sleep summaries over seven noon-anchored day windows. Window k covers
// clock hours [24k-12, 24k+12) clipped to the week, so a midnight-spanning
// bout stays whole; onset/offset are hours since that window's noon.
inline ViterbiFeatures viterbi_features(const StatePath& path, int epoch_minutes) {
    detail::check_week_length(path.states.size(), epoch_minutes);
    const int per_hour = 60 / epoch_minutes;

    std::vector<double> durations, onsets, offsets, bouts;
    ViterbiFeatures out;
    for (int k = 0; k < 7; ++k) {
        const int lo_hour = std::max(0, 24 * k - 12);
        const int hi_hour = 24 * k + 12;
        const std::size_t lo = static_cast<std::size_t>(lo_hour * per_hour);
        const std::size_t hi = static_cast<std::size_t>(hi_hour * per_hour);
        const double noon = 24.0 * k - 12.0;

        std::size_t best_start = 0, best_len = 0, runs = 0;
        std::size_t t = lo;
        while (t < hi) {
            if (path.states[t] != tvhmm::kInactive) { ++t; continue; }
            std::size_t start = t;
            while (t < hi && path.states[t] == tvhmm::kInactive) ++t;
            ++runs;
            if (t - start > best_len) { best_len = t - start; best_start = start; }
        }
        if (runs == 0) { ++out.windows_skipped; continue; }
        ++out.windows_used;
        durations.push_back(static_cast<double>(best_len) * epoch_minutes / 60.0);
        onsets.push_back(static_cast<double>(best_start) * epoch_minutes / 60.0 - noon);
        offsets.push_back(static_cast<double>(best_start + best_len) * epoch_minutes / 60.0 - noon);
        bouts.push_back(static_cast<double>(runs));
    }
    if (out.windows_used == 0) return out;

    out.available = true;
    out.sleep_duration_mean = detail::mean_of(durations);
    out.sleep_duration_std = detail::population_std(durations);
    out.sleep_onset_mean = detail::mean_of(onsets);
    out.sleep_onset_std = detail::population_std(onsets);
    out.sleep_offset_mean = detail::mean_of(offsets);
    out.sleep_offset_std = detail::population_std(offsets);
    out.inactive_bouts_mean = detail::mean_of(bouts);
    out.inactive_bouts_std = detail::population_std(bouts);
    return out;
}

// Features of the daily occupancy profile. The inactive region is the
// circular set where p_inactive exceeds 0.5; its boundaries come from linear
// interpolation between grid samples.
inline ProfileFeatures profile_features(const DailyProfile& profile) {
    const std::size_t n = profile.size();
    if (n == 0) throw std::invalid_argument("empty profile");
    const double h = profile.epoch_minutes / 60.0;

    ProfileFeatures out;
    std::size_t hi_at = 0, lo_at = 0;
    for (std::size_t g = 1; g < n; ++g) {
        if (profile.p_inactive[g] > profile.p_inactive[hi_at]) hi_at = g;
        if (profile.p_inactive[g] < profile.p_inactive[lo_at]) lo_at = g;
    }
    out.max_p_inactive = profile.p_inactive[hi_at];
    out.max_p_inactive_time = profile.clock_hour(hi_at);
    out.max_p_active = 1.0 - profile.p_inactive[lo_at];
    out.max_p_active_time = profile.clock_hour(lo_at);
    out.rhythm_index = profile.p_inactive[hi_at] - profile.p_inactive[lo_at];

    std::size_t inside = 0;
    double area = 0.0;
    for (std::size_t g = 0; g < n; ++g) {
        if (profile.p_inactive[g] > 0.5) {
            ++inside;
            area += profile.p_inactive[g] * h;
        }
    }
    if (inside == 0) return out;
    out.inactive_area = area;
    if (inside == n) {
        out.inactive_duration = 24.0;  // no boundary to report
        return out;
    }

    struct Crossing {
        double time;
        bool rising;
    };
    std::vector<Crossing> crossings;
    for (std::size_t g = 0; g < n; ++g) {
        const std::size_t g2 = (g + 1) % n;
        const double p0 = profile.p_inactive[g], p1 = profile.p_inactive[g2];
        const bool in0 = p0 > 0.5, in1 = p1 > 0.5;
        if (in0 == in1) continue;
        double t = profile.clock_hour(g) + (0.5 - p0) / (p1 - p0) * h;
        if (t >= 24.0) t -= 24.0;
        crossings.push_back({t, in1});
    }

    double total = 0.0;
    double best_len = -1.0, best_on = 0.0, best_off = 0.0;
    for (std::size_t i = 0; i < crossings.size(); ++i) {
        if (!crossings[i].rising) continue;
        const Crossing& fall = crossings[(i + 1) % crossings.size()];
        double len = fall.time - crossings[i].time;
        if (len <= 0.0) len += 24.0;
        total += len;
        if (len > best_len) {
            best_len = len;
            best_on = crossings[i].time;
            best_off = fall.time;
        }
    }
    out.inactive_duration = total;
    out.inactive_onset = best_on;
    out.inactive_offset = best_off;
    return out;
}

inline FeatureRow assemble_feature_row(const WeekRecord& week, const TvHmmModel& model,
                                       const StatePath& path, const DailyProfile& profile) {
    if (path.states.size() != week.series.size() ||
        profile.epoch_minutes != week.series.epoch_minutes)
        throw std::invalid_argument("inputs describe different weeks");
    (void)model;

    FeatureRow row;
    row.participant_id = week.participant_id;
    row.week_start_ms = week.week_start_ms;
    row.qids = week.qids;

    EpochSeries activity = week.series;
    for (double& v : activity.values) v = std::exp(v);
    const TraditionalFeatures tf = traditional_features(activity);
    if (tf.available) {
        row.values[0] = tf.l5;
        row.values[1] = tf.l5_time;
        row.values[2] = tf.m10;
        row.values[3] = tf.m10_time;
        row.values[4] = tf.relative_amplitude;
    }

    const ViterbiFeatures vf = viterbi_features(path, week.series.epoch_minutes);
    if (vf.available) {
        row.values[5] = vf.sleep_duration_mean;
        row.values[6] = vf.sleep_duration_std;
        row.values[7] = vf.sleep_onset_mean;
        row.values[8] = vf.sleep_onset_std;
        row.values[9] = vf.sleep_offset_mean;
        row.values[10] = vf.sleep_offset_std;
        row.values[11] = vf.inactive_bouts_mean;
        row.values[12] = vf.inactive_bouts_std;
    }

    const ProfileFeatures pf = profile_features(profile);
    row.values[13] = pf.inactive_duration;
    row.values[14] = pf.inactive_onset;
    row.values[15] = pf.inactive_offset;
    row.values[16] = pf.inactive_area;
    row.values[17] = pf.max_p_inactive;
    row.values[18] = pf.max_p_inactive_time;
    row.values[19] = pf.max_p_active;
    row.values[20] = pf.max_p_active_time;
    row.values[21] = pf.rhythm_index;
    return row;
}

// --- Features CSV ---

inline std::vector<std::string> features_header() {
    std::vector<std::string> h = {"participant_id", "week_start", "qids"};
    for (const char* n : feature_names()) h.push_back(n);
    return h;
}

inline void sort_rows(std::vector<FeatureRow>& rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const FeatureRow& a, const FeatureRow& b) {
        if (a.participant_id != b.participant_id) return a.participant_id < b.participant_id;
        return a.week_start_ms < b.week_start_ms;
    });
}

inline void write_features_csv(std::ostream& out, std::span<const FeatureRow> rows,
                               const timeutil::LocalCalendar& cal) {
    const auto header = features_header();
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const FeatureRow& r : rows) {
        out << r.participant_id << ',' << timeutil::format_local_date(r.week_start_ms, cal) << ',';
        if (r.qids) out << *r.qids; else out << "NA";
        for (const auto& v : r.values) {
            out << ',';
            if (v) out << csv::format_double(*v); else out << "NA";
        }
        out << '\n';
    }
}

inline std::vector<FeatureRow> read_features_csv(std::istream& in, const std::string& name,
                                                 const timeutil::LocalCalendar& cal) {
    std::string line;
    if (!std::getline(in, line)) throw csv::ValidationError(name + ": empty file");
    csv::expect_header(csv::split(csv::strip_cr(line)), features_header(), name);

    std::vector<FeatureRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = csv::strip_cr(line);
        if (line.empty()) continue;
        auto cols = csv::split(line);
        if (cols.size() != 3 + kFeatureCount)
            throw csv::ValidationError(name + ": row " + std::to_string(lineno) +
                                       ": expected " + std::to_string(3 + kFeatureCount) +
                                       " columns, found " + std::to_string(cols.size()));
        FeatureRow r;
        r.participant_id = cols[0];
        try {
            r.week_start_ms = cal.to_utc(timeutil::parse_date(cols[1]) * timeutil::kMsPerDay);
        } catch (const std::invalid_argument& e) {
            throw csv::ValidationError(name + ": row " + std::to_string(lineno) + ": " + e.what());
        }
        if (cols[2] != "NA") r.qids = static_cast<int>(csv::parse_int(cols[2], lineno, "qids"));
        for (int f = 0; f < kFeatureCount; ++f) {
            const std::string& cell = cols[3 + f];
            if (cell == "NA") continue;
            r.values[f] = csv::parse_double(cell, lineno, feature_names()[f]);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<FeatureRow> read_features_csv(const std::string& path,
                                                 const timeutil::LocalCalendar& cal) {
    auto in = csv::open_input(path);
    return read_features_csv(in, path, cal);
}

}  // namespace features
}  // namespace actimood

#endif
