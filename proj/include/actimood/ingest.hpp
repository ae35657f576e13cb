#ifndef ACTIMOOD_INGEST_HPP
#define ACTIMOOD_INGEST_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "actimood/csv.hpp"
#include "actimood/timeutil.hpp"

namespace actimood {
namespace ingest {

using timeutil::LocalCalendar;

struct RawSample {
    std::int64_t timestamp_ms = 0;  // UTC
    double ax = 0.0, ay = 0.0, az = 0.0;  // units of g
};

// Evenly gridded log-activity observations. `start_ms` sits on the local
// epoch grid; `missing[t]` set means `values[t]` carries no information.
struct EpochSeries {
    std::int64_t start_ms = 0;
    int epoch_minutes = 5;
    std::vector<double> values;
    std::vector<std::uint8_t> missing;

    std::size_t size() const { return values.size(); }
    std::int64_t epoch_ms() const {
        return static_cast<std::int64_t>(epoch_minutes) * timeutil::kMsPerMinute;
    }
    std::int64_t end_ms() const {
        return start_ms + static_cast<std::int64_t>(values.size()) * epoch_ms();
    }
};

struct WeekRecord {
    std::string participant_id;
    std::int64_t week_start_ms = 0;  // local Sunday midnight, stored as UTC ms
    EpochSeries series;
    std::optional<int> qids;
    double missing_fraction = 0.0;
    bool eligible = false;

    std::size_t epochs_per_week() const {
        return static_cast<std::size_t>(7 * 24 * 60 / series.epoch_minutes);
    }
};

struct LabelPoint {
    std::string participant_id;
    std::int64_t date_days = 0;  // local calendar date, days since epoch
    int qids = 0;
};

struct IngestReport {
    std::int64_t clamped_samples = 0;
    std::int64_t rejected_rows = 0;
    std::int64_t weeks_produced = 0;
    std::int64_t weeks_eligible = 0;
};

constexpr double kDeviceRangeG = 2.0;
constexpr double kDefaultLogEps = 1e-4;
constexpr double kDefaultMissingThreshold = 0.2;

inline double magnitude(double ax, double ay, double az) {
    return std::sqrt(ax * ax + ay * ay + az * az);
}

struct AggregateOptions {
    int epoch_minutes = 5;
    double eps = kDefaultLogEps;
    int min_samples = 1;
};

namespace detail {

inline void check_aggregate_options(const AggregateOptions& opt) {
    if (opt.epoch_minutes <= 0 || 60 % opt.epoch_minutes != 0)
        throw std::invalid_argument("epoch_minutes must divide 60");
    if (!(opt.eps > 0.0)) throw std::invalid_argument("eps must be positive");
    if (opt.min_samples < 1) throw std::invalid_argument("min_samples must be >= 1");
}

inline double population_sd(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace detail

// Aggregates raw samples into log-activity epochs over an explicit local-time
// span. Activity is the population standard deviation of total magnitude in
// the window, which removes the static gravity component; the observation is
// ln(eps + activity). Windows with fewer than min_samples samples are missing.
inline EpochSeries epoch_aggregate(std::span<const RawSample> samples, const LocalCalendar& cal,
                                   const AggregateOptions& opt, std::int64_t span_start_ms,
                                   std::int64_t span_end_ms) {
    detail::check_aggregate_options(opt);
    const std::int64_t epoch_ms =
        static_cast<std::int64_t>(opt.epoch_minutes) * timeutil::kMsPerMinute;

    // Snap the span outward to the local epoch grid.
    std::int64_t lo = timeutil::floor_div(cal.to_local(span_start_ms), epoch_ms);
    std::int64_t hi_local = cal.to_local(span_end_ms);
    std::int64_t hi = timeutil::floor_div(hi_local + epoch_ms - 1, epoch_ms);
    if (hi < lo) hi = lo;

    EpochSeries out;
    out.start_ms = cal.to_utc(lo * epoch_ms);
    out.epoch_minutes = opt.epoch_minutes;
    const std::size_t n = static_cast<std::size_t>(hi - lo);
    out.values.assign(n, 0.0);
    out.missing.assign(n, 1);

    std::vector<double> window;
    std::size_t i = 0;
    for (std::size_t e = 0; e < n; ++e) {
        const std::int64_t w_end = cal.to_utc((lo + static_cast<std::int64_t>(e) + 1) * epoch_ms);
        window.clear();
        while (i < samples.size() && samples[i].timestamp_ms < w_end) {
            const RawSample& s = samples[i];
            window.push_back(magnitude(s.ax, s.ay, s.az));
            ++i;
        }
        if (static_cast<int>(window.size()) >= opt.min_samples) {
            out.values[e] = std::log(opt.eps + detail::population_sd(window));
            out.missing[e] = 0;
        }
    }
    return out;
}

// Span derived from the data; empty input yields an empty series.
inline EpochSeries epoch_aggregate(std::span<const RawSample> samples, const LocalCalendar& cal,
                                   const AggregateOptions& opt = {}) {
    detail::check_aggregate_options(opt);
    if (samples.empty()) {
        EpochSeries out;
        out.epoch_minutes = opt.epoch_minutes;
        return out;
    }
    return epoch_aggregate(samples, cal, opt, samples.front().timestamp_ms,
                           samples.back().timestamp_ms + 1);
}

// Cuts the series into complete local Sunday-to-Sunday weeks; partial leading
// and trailing weeks are dropped. Records come back unlabeled.
inline std::vector<WeekRecord> week_segment(const EpochSeries& series, const LocalCalendar& cal) {
    std::vector<WeekRecord> weeks;
    if (series.values.empty()) return weeks;
    const std::int64_t epoch_ms = series.epoch_ms();
    const std::size_t per_week = static_cast<std::size_t>(timeutil::kMsPerWeek / epoch_ms);

    std::int64_t first_sunday = timeutil::prev_sunday_midnight(series.start_ms, cal);
    if (first_sunday < series.start_ms) first_sunday += timeutil::kMsPerWeek;

    for (std::int64_t ws = first_sunday; ws + timeutil::kMsPerWeek <= series.end_ms();
         ws += timeutil::kMsPerWeek) {
        const std::size_t off = static_cast<std::size_t>((ws - series.start_ms) / epoch_ms);
        WeekRecord rec;
        rec.week_start_ms = ws;
        rec.series.start_ms = ws;
        rec.series.epoch_minutes = series.epoch_minutes;
        rec.series.values.assign(series.values.begin() + off, series.values.begin() + off + per_week);
        rec.series.missing.assign(series.missing.begin() + off,
                                  series.missing.begin() + off + per_week);
        std::size_t miss = 0;
        for (auto m : rec.series.missing) miss += m ? 1 : 0;
        rec.missing_fraction = static_cast<double>(miss) / static_cast<double>(per_week);
        weeks.push_back(std::move(rec));
    }
    return weeks;
}

namespace detail {

inline int round_half_away(double x) {
    return static_cast<int>(x >= 0.0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}

}  // namespace detail

// Labeling rules, per week: a score dated inside the week wins (latest date on
// ties); otherwise linear interpolation between the nearest earlier and later
// scores, evaluated at the week midpoint and rounded to the integer scale,
// provided the nearer of the two lies within 7 days of the week's span.
// Weeks without a label or with missing_fraction >= threshold are ineligible.
inline void attach_labels(std::vector<WeekRecord>& weeks, std::vector<LabelPoint> labels,
                          const LocalCalendar& cal,
                          double missing_threshold = kDefaultMissingThreshold) {
    std::stable_sort(labels.begin(), labels.end(), [](const LabelPoint& a, const LabelPoint& b) {
        if (a.participant_id != b.participant_id) return a.participant_id < b.participant_id;
        return a.date_days < b.date_days;
    });

    for (WeekRecord& week : weeks) {
        const std::int64_t d0 = timeutil::local_day_index(week.week_start_ms, cal);
        const std::int64_t d_last = d0 + 6;

        const LabelPoint* in_week = nullptr;
        const LabelPoint* before = nullptr;
        const LabelPoint* after = nullptr;
        for (const LabelPoint& lp : labels) {
            if (lp.participant_id != week.participant_id) continue;
            if (lp.date_days >= d0 && lp.date_days <= d_last) {
                if (!in_week || lp.date_days >= in_week->date_days) in_week = &lp;
            } else if (lp.date_days < d0) {
                if (!before || lp.date_days > before->date_days) before = &lp;
            } else {
                if (!after || lp.date_days < after->date_days) after = &lp;
            }
        }

        week.qids.reset();
        if (in_week) {
            week.qids = in_week->qids;
        } else if (before && after) {
            const std::int64_t gap_before = d0 - before->date_days;
            const std::int64_t gap_after = after->date_days - d_last;
            if (std::min(gap_before, gap_after) <= 7) {
                const double mid = static_cast<double>(d0) + 3.5;
                const double t = (mid - static_cast<double>(before->date_days)) /
                                 static_cast<double>(after->date_days - before->date_days);
                const double q = before->qids + t * (after->qids - before->qids);
                week.qids = std::clamp(detail::round_half_away(q), 0, 27);
            }
        }
        week.eligible = week.qids.has_value() && week.missing_fraction < missing_threshold;
    }
}

// --- Accelerometer CSV: `timestamp_ms,ax_g,ay_g,az_g` ---

inline const std::vector<std::string>& accel_header() {
    static const std::vector<std::string> h = {"timestamp_ms", "ax_g", "ay_g", "az_g"};
    return h;
}

// Parses, clamps to device range, and drops non-finite or time-disordered
// rows, counting both in the report. Structural problems throw ValidationError.
inline std::vector<RawSample> read_accel_csv(std::istream& in, const std::string& name,
                                             IngestReport& report) {
    std::string line;
    if (!std::getline(in, line)) throw csv::ValidationError(name + ": empty file");
    csv::expect_header(csv::split(csv::strip_cr(line)), accel_header(), name);

    std::vector<RawSample> samples;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        line = csv::strip_cr(line);
        if (line.empty()) continue;
        auto cols = csv::split(line);
        if (cols.size() != 4)
            throw csv::ValidationError(name + ": row " + std::to_string(row) + ": expected 4 columns, found " +
                                       std::to_string(cols.size()));
        RawSample s;
        s.timestamp_ms = csv::parse_int(cols[0], row, "timestamp_ms");
        s.ax = csv::parse_double(cols[1], row, "ax_g");
        s.ay = csv::parse_double(cols[2], row, "ay_g");
        s.az = csv::parse_double(cols[3], row, "az_g");
        if (!std::isfinite(s.ax) || !std::isfinite(s.ay) || !std::isfinite(s.az)) {
            ++report.rejected_rows;
            continue;
        }
        if (!samples.empty() && s.timestamp_ms <= samples.back().timestamp_ms) {
            ++report.rejected_rows;
            continue;
        }
        bool clamped = false;
        for (double* a : {&s.ax, &s.ay, &s.az}) {
            if (*a > kDeviceRangeG) { *a = kDeviceRangeG; clamped = true; }
            if (*a < -kDeviceRangeG) { *a = -kDeviceRangeG; clamped = true; }
        }
        if (clamped) ++report.clamped_samples;
        samples.push_back(s);
    }
    return samples;
}

inline std::vector<RawSample> read_accel_csv(const std::string& path, IngestReport& report) {
    auto in = csv::open_input(path);
    return read_accel_csv(in, path, report);
}

inline void write_accel_csv(std::ostream& out, std::span<const RawSample> samples) {
    out << "timestamp_ms,ax_g,ay_g,az_g\n";
    for (const RawSample& s : samples)
        out << s.timestamp_ms << ',' << csv::format_double(s.ax) << ',' << csv::format_double(s.ay)
            << ',' << csv::format_double(s.az) << '\n';
}

// --- Labels CSV: `participant_id,date,qids` ---

inline const std::vector<std::string>& labels_header() {
    static const std::vector<std::string> h = {"participant_id", "date", "qids"};
    return h;
}

inline std::vector<LabelPoint> read_labels_csv(std::istream& in, const std::string& name) {
    std::string line;
    if (!std::getline(in, line)) throw csv::ValidationError(name + ": empty file");
    csv::expect_header(csv::split(csv::strip_cr(line)), labels_header(), name);

    std::vector<LabelPoint> labels;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        line = csv::strip_cr(line);
        if (line.empty()) continue;
        auto cols = csv::split(line);
        if (cols.size() != 3)
            throw csv::ValidationError(name + ": row " + std::to_string(row) + ": expected 3 columns, found " +
                                       std::to_string(cols.size()));
        LabelPoint lp;
        lp.participant_id = cols[0];
        try {
            lp.date_days = timeutil::parse_date(cols[1]);
        } catch (const std::invalid_argument& e) {
            throw csv::ValidationError(name + ": row " + std::to_string(row) + ": " + e.what());
        }
        lp.qids = static_cast<int>(csv::parse_int(cols[2], row, "qids"));
        if (lp.qids < 0 || lp.qids > 27)
            throw csv::ValidationError(name + ": row " + std::to_string(row) +
                                       ": qids out of range [0,27]: " + cols[2]);
        for (const LabelPoint& seen : labels)
            if (seen.participant_id == lp.participant_id && seen.date_days == lp.date_days)
                throw csv::ValidationError(name + ": row " + std::to_string(row) +
                                           ": duplicate label for participant '" +
                                           lp.participant_id + "' on " + cols[1]);
        labels.push_back(std::move(lp));
    }
    return labels;
}

inline std::vector<LabelPoint> read_labels_csv(const std::string& path) {
    auto in = csv::open_input(path);
    return read_labels_csv(in, path);
}

inline void write_labels_csv(std::ostream& out, std::span<const LabelPoint> labels,
                             const LocalCalendar& cal) {
    out << "participant_id,date,qids\n";
    for (const LabelPoint& lp : labels) {
        const std::int64_t utc = cal.to_utc(lp.date_days * timeutil::kMsPerDay);
        out << lp.participant_id << ',' << timeutil::format_local_date(utc, cal) << ',' << lp.qids
            << '\n';
    }
}

}  // namespace ingest
}  // namespace actimood

#endif
