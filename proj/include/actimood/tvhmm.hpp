#ifndef ACTIMOOD_TVHMM_HPP
#define ACTIMOOD_TVHMM_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "actimood/csv.hpp"
#include "actimood/ingest.hpp"
#include "actimood/optim.hpp"
#include "actimood/rng.hpp"
#include "actimood/timeutil.hpp"

namespace actimood {
namespace tvhmm {

using ingest::EpochSeries;

constexpr int kStates = 2;
constexpr int kInactive = 0;  // lower emission mean after fitting
constexpr int kActive = 1;
constexpr double kVarianceFloor = 1e-6;

// Sine/cosine pair over the daily cycle, evaluated at epoch-midpoint local
// clock time.
struct CovariateSpec {
    double period_hours = 24.0;
    timeutil::LocalCalendar calendar{0};

    Eigen::Vector2d at_hours(double clock_hours) const {
        const double w = 2.0 * M_PI * clock_hours / period_hours;
        return {std::sin(w), std::cos(w)};
    }
    Eigen::Vector2d at_epoch(const EpochSeries& s, std::size_t t) const {
        const std::int64_t mid =
            s.start_ms + static_cast<std::int64_t>(t) * s.epoch_ms() + s.epoch_ms() / 2;
        return at_hours(timeutil::clock_hours(mid, calendar));
    }
};

struct EmissionParams {
    std::array<double, kStates> mean{0.0, 0.0};
    std::array<double, kStates> var{1.0, 1.0};
};

// Multinomial logistic coefficients; the last column of each matrix is the
// reference and stays pinned at zero.
struct TransitionCoeffs {
    Eigen::Matrix2d c0 = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d c1_sin = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d c1_cos = Eigen::Matrix2d::Zero();
};

struct TvHmmModel {
    Eigen::Vector2d pi{0.5, 0.5};
    EmissionParams emissions;
    TransitionCoeffs coeffs;
    CovariateSpec covariates;
    std::vector<double> fit_log;
    int iterations = 0;
    bool converged = false;
    std::uint64_t seed = 0;
};

struct PosteriorSet {
    Eigen::MatrixX2d gamma;           // T x m
    std::vector<Eigen::Matrix2d> xi;  // T-1 entries, xi[t] pairs with covariate at t
    double loglik = 0.0;
};

struct StatePath {
    std::vector<int> states;  // kInactive / kActive per epoch
};

// Stationary daily occupancy; grid point g covers clock minutes
// [g*epoch, (g+1)*epoch) and is sampled at the window midpoint.
struct DailyProfile {
    int epoch_minutes = 5;
    std::vector<double> p_inactive;
    bool capped = false;

    std::size_t size() const { return p_inactive.size(); }
    double p_active(std::size_t g) const { return 1.0 - p_inactive[g]; }
    double clock_hour(std::size_t g) const {
        return (static_cast<double>(g) + 0.5) * epoch_minutes / 60.0;
    }
};

inline Eigen::Matrix2d logits(const TransitionCoeffs& c, const Eigen::Vector2d& x) {
    return c.c0 + c.c1_sin * x[0] + c.c1_cos * x[1];
}

inline Eigen::Matrix2d transition_matrix(const TransitionCoeffs& c, const Eigen::Vector2d& x) {
    const Eigen::Matrix2d z = logits(c, x);
    Eigen::Matrix2d a;
    for (int i = 0; i < kStates; ++i) {
        const double zmax = z.row(i).maxCoeff();
        double sum = 0.0;
        for (int j = 0; j < kStates; ++j) {
            a(i, j) = std::exp(z(i, j) - zmax);
            sum += a(i, j);
        }
        a.row(i) /= sum;
    }
    return a;
}

inline Eigen::Matrix2d log_transition_matrix(const TransitionCoeffs& c, const Eigen::Vector2d& x) {
    const Eigen::Matrix2d z = logits(c, x);
    Eigen::Matrix2d la;
    for (int i = 0; i < kStates; ++i) {
        const double zmax = z.row(i).maxCoeff();
        double sum = 0.0;
        for (int j = 0; j < kStates; ++j) sum += std::exp(z(i, j) - zmax);
        const double lse = zmax + std::log(sum);
        for (int j = 0; j < kStates; ++j) la(i, j) = z(i, j) - lse;
    }
    return la;
}

namespace detail {

inline void check_series(const EpochSeries& s) {
    if (s.values.empty()) throw std::invalid_argument("empty observation sequence");
    if (s.missing.size() != s.values.size())
        throw std::invalid_argument("observation mask length mismatch");
}

inline std::vector<Eigen::Vector2d> covariate_track(const EpochSeries& s,
                                                    const CovariateSpec& cov) {
    std::vector<Eigen::Vector2d> xs(s.size());
    for (std::size_t t = 0; t < s.size(); ++t) xs[t] = cov.at_epoch(s, t);
    return xs;
}

// Log emission density per state; missing epochs contribute log 1 = 0.
inline Eigen::MatrixX2d emission_loglik(const EpochSeries& s, const EmissionParams& em) {
    Eigen::MatrixX2d lb(s.size(), kStates);
    for (std::size_t t = 0; t < s.size(); ++t) {
        if (s.missing[t]) {
            lb(t, 0) = lb(t, 1) = 0.0;
            continue;
        }
        for (int i = 0; i < kStates; ++i) {
            const double d = s.values[t] - em.mean[i];
            lb(t, i) = -0.5 * std::log(2.0 * M_PI * em.var[i]) - d * d / (2.0 * em.var[i]);
        }
    }
    return lb;
}

}  // namespace detail

inline PosteriorSet forward_backward(const EpochSeries& series, const TvHmmModel& model) {
    detail::check_series(series);
    const std::size_t n = series.size();
    const auto xs = detail::covariate_track(series, model.covariates);
    const Eigen::MatrixX2d lb = detail::emission_loglik(series, model.emissions);

    // Scaled recursions; each epoch's emission likelihoods are shifted by
    // their row maximum before exponentiation.
    Eigen::MatrixX2d e(n, kStates);
    double logshift = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double m = std::max(lb(t, 0), lb(t, 1));
        e(t, 0) = std::exp(lb(t, 0) - m);
        e(t, 1) = std::exp(lb(t, 1) - m);
        logshift += m;
    }

    std::vector<Eigen::Matrix2d> a(n > 1 ? n - 1 : 0);
    for (std::size_t t = 0; t + 1 < n; ++t) a[t] = transition_matrix(model.coeffs, xs[t]);

    Eigen::MatrixX2d alpha(n, kStates), beta(n, kStates);
    Eigen::VectorXd scale(n);

    alpha(0, 0) = model.pi[0] * e(0, 0);
    alpha(0, 1) = model.pi[1] * e(0, 1);
    scale[0] = alpha.row(0).sum();
    if (!(scale[0] > 0.0)) throw std::runtime_error("forward pass underflow");
    alpha.row(0) /= scale[0];
    for (std::size_t t = 1; t < n; ++t) {
        for (int j = 0; j < kStates; ++j)
            alpha(t, j) = (alpha(t - 1, 0) * a[t - 1](0, j) + alpha(t - 1, 1) * a[t - 1](1, j)) *
                          e(t, j);
        scale[t] = alpha.row(t).sum();
        if (!(scale[t] > 0.0)) throw std::runtime_error("forward pass underflow");
        alpha.row(t) /= scale[t];
    }

    beta.row(n - 1).setOnes();
    for (std::size_t t = n - 1; t-- > 0;) {
        for (int i = 0; i < kStates; ++i)
            beta(t, i) = (a[t](i, 0) * e(t + 1, 0) * beta(t + 1, 0) +
                          a[t](i, 1) * e(t + 1, 1) * beta(t + 1, 1)) /
                         scale[t + 1];
    }

    PosteriorSet post;
    post.loglik = logshift + scale.array().log().sum();
    post.gamma.resize(n, kStates);
    for (std::size_t t = 0; t < n; ++t) {
        post.gamma(t, 0) = alpha(t, 0) * beta(t, 0);
        post.gamma(t, 1) = alpha(t, 1) * beta(t, 1);
        const double s = post.gamma.row(t).sum();
        post.gamma.row(t) /= s;
    }
    post.xi.resize(n > 1 ? n - 1 : 0);
    for (std::size_t t = 0; t + 1 < n; ++t) {
        for (int i = 0; i < kStates; ++i)
            for (int j = 0; j < kStates; ++j)
                post.xi[t](i, j) =
                    alpha(t, i) * a[t](i, j) * e(t + 1, j) * beta(t + 1, j) / scale[t + 1];
        const double s = post.xi[t].sum();
        post.xi[t] /= s;
    }
    return post;
}

namespace detail {

// The free transition coefficients as a flat vector; column kStates-1 stays
// pinned at zero as the gauge reference.
constexpr int kFreeCol = 0;

inline Eigen::VectorXd pack_coeffs(const TransitionCoeffs& c) {
    Eigen::VectorXd p(6);
    for (int i = 0; i < kStates; ++i) {
        p[3 * i + 0] = c.c0(i, kFreeCol);
        p[3 * i + 1] = c.c1_sin(i, kFreeCol);
        p[3 * i + 2] = c.c1_cos(i, kFreeCol);
    }
    return p;
}

inline TransitionCoeffs unpack_coeffs(const Eigen::VectorXd& p) {
    TransitionCoeffs c;
    for (int i = 0; i < kStates; ++i) {
        c.c0(i, kFreeCol) = p[3 * i + 0];
        c.c1_sin(i, kFreeCol) = p[3 * i + 1];
        c.c1_cos(i, kFreeCol) = p[3 * i + 2];
    }
    return c;
}

// sum_t sum_ij xi_t(i,j) * log a_ij(t) and, when asked, its gradient in the
// packed free coefficients.
inline double transition_objective(const Eigen::VectorXd& p, const std::vector<Eigen::Matrix2d>& xi,
                                   const std::vector<Eigen::Vector2d>& xs,
                                   Eigen::VectorXd* grad = nullptr) {
    const TransitionCoeffs c = unpack_coeffs(p);
    double f = 0.0;
    if (grad) *grad = Eigen::VectorXd::Zero(6);
    for (std::size_t t = 0; t < xi.size(); ++t) {
        const Eigen::Matrix2d la = log_transition_matrix(c, xs[t]);
        for (int i = 0; i < kStates; ++i) {
            f += xi[t](i, 0) * la(i, 0) + xi[t](i, 1) * la(i, 1);
            if (!grad) continue;
            const double mass = xi[t](i, 0) + xi[t](i, 1);
            const double resid = xi[t](i, kFreeCol) - mass * std::exp(la(i, kFreeCol));
            (*grad)[3 * i + 0] += resid;
            (*grad)[3 * i + 1] += resid * xs[t][0];
            (*grad)[3 * i + 2] += resid * xs[t][1];
        }
    }
    return f;
}

}  // namespace detail

// Maximizes sum_t sum_ij xi_t(i,j) * log a_ij(t) over the free (non-gauge)
// coefficients. Never returns a worse objective than `start`.
inline TransitionCoeffs maximize_transition_coeffs(const std::vector<Eigen::Matrix2d>& xi,
                                                   const std::vector<Eigen::Vector2d>& xs,
                                                   const TransitionCoeffs& start,
                                                   int max_iter = 200, double grad_tol = 1e-6,
                                                   bool* hit_cap = nullptr) {
    if (xi.size() != xs.size())
        throw std::invalid_argument("posterior/covariate length mismatch");
    for (const auto& m : xi)
        if (!m.allFinite()) throw std::invalid_argument("non-finite posterior weights");

    auto fn = [&](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
        return detail::transition_objective(p, xi, xs, &g);
    };
    auto res = optim::bfgs_maximize(fn, detail::pack_coeffs(start), max_iter, grad_tol);
    if (hit_cap) *hit_cap = !res.converged;
    return detail::unpack_coeffs(res.x);
}

struct FitConfig {
    int max_iter = 100;
    double tol = 1e-6;
    std::uint64_t seed = 0;
    int n_restarts = 3;
    CovariateSpec covariates;
};

namespace detail {

inline TvHmmModel initial_model(const EpochSeries& series, const FitConfig& cfg, int restart) {
    std::vector<double> obs;
    for (std::size_t t = 0; t < series.size(); ++t)
        if (!series.missing[t]) obs.push_back(series.values[t]);
    std::vector<double> sorted = obs;
    std::sort(sorted.begin(), sorted.end());
    double split = sorted[sorted.size() / 2];
    if (split >= sorted.back()) {  // median hits the max, fall back to the mean
        double mean = 0.0;
        for (double v : sorted) mean += v;
        split = mean / static_cast<double>(sorted.size());
    }

    TvHmmModel m;
    m.covariates = cfg.covariates;
    m.seed = cfg.seed;
    m.pi = {0.5, 0.5};

    std::array<std::vector<double>, kStates> halves;
    for (double v : obs) halves[v <= split ? 0 : 1].push_back(v);
    for (int i = 0; i < kStates; ++i) {
        double mean = 0.0;
        for (double v : halves[i]) mean += v;
        mean /= static_cast<double>(halves[i].size());
        double var = 0.0;
        for (double v : halves[i]) var += (v - mean) * (v - mean);
        var /= static_cast<double>(halves[i].size());
        m.emissions.mean[i] = mean;
        m.emissions.var[i] = std::max(var, 1e-4);
    }

    // Intercepts from transition counts of the hard split assignment.
    Eigen::Matrix2d counts = Eigen::Matrix2d::Ones();  // add-one smoothing
    int prev = -1;
    for (std::size_t t = 0; t < series.size(); ++t) {
        if (series.missing[t]) { prev = -1; continue; }
        const int cur = series.values[t] <= split ? 0 : 1;
        if (prev >= 0) counts(prev, cur) += 1.0;
        prev = cur;
    }
    for (int i = 0; i < kStates; ++i)
        m.coeffs.c0(i, 0) = std::log(counts(i, 0) / counts(i, 1));

    if (restart > 0) {
        rng::Stream noise(rng::mix(cfg.seed, static_cast<std::uint64_t>(restart)));
        for (int i = 0; i < kStates; ++i) m.coeffs.c0(i, 0) += noise.normal(0.0, 0.5);
    }
    return m;
}

inline void relabel_by_mean(TvHmmModel& m) {
    if (m.emissions.mean[0] <= m.emissions.mean[1]) return;
    std::swap(m.emissions.mean[0], m.emissions.mean[1]);
    std::swap(m.emissions.var[0], m.emissions.var[1]);
    std::swap(m.pi[0], m.pi[1]);
    // Swapping both state labels flips each row's two-way logit and exchanges rows.
    const TransitionCoeffs old = m.coeffs;
    for (int i = 0; i < kStates; ++i) {
        m.coeffs.c0(i, 0) = -old.c0(1 - i, 0);
        m.coeffs.c1_sin(i, 0) = -old.c1_sin(1 - i, 0);
        m.coeffs.c1_cos(i, 0) = -old.c1_cos(1 - i, 0);
    }
}

}  // namespace detail

inline TvHmmModel em_fit(const EpochSeries& series, const FitConfig& cfg = {}) {
    detail::check_series(series);
    if (cfg.max_iter < 1 || cfg.n_restarts < 1 || !(cfg.tol > 0.0))
        throw std::invalid_argument("bad fit config");

    std::size_t observed = 0;
    std::vector<double> distinct;
    for (std::size_t t = 0; t < series.size(); ++t) {
        if (series.missing[t]) continue;
        ++observed;
        if (std::find(distinct.begin(), distinct.end(), series.values[t]) == distinct.end() &&
            distinct.size() < 2)
            distinct.push_back(series.values[t]);
    }
    if (observed * 10 < series.size() || distinct.size() < 2)
        throw std::invalid_argument("insufficient data for fit");

    const auto xs = detail::covariate_track(series, cfg.covariates);
    const std::vector<Eigen::Vector2d> xs_head(xs.begin(), xs.end() - 1);

    TvHmmModel best;
    bool have_best = false;
    for (int r = 0; r < cfg.n_restarts; ++r) {
        TvHmmModel m = detail::initial_model(series, cfg, r);
        double prev = -std::numeric_limits<double>::infinity();
        for (int it = 0;; ++it) {
            const PosteriorSet post = forward_backward(series, m);
            m.fit_log.push_back(post.loglik);
            if (post.loglik < prev - 1e-8)
                throw std::runtime_error("log-likelihood decreased during fit");
            if (it > 0 && (post.loglik - prev) / std::max(std::abs(prev), 1e-12) < cfg.tol) {
                m.converged = true;
                break;
            }
            if (it == cfg.max_iter) break;
            prev = post.loglik;

            m.pi = {post.gamma(0, 0), post.gamma(0, 1)};
            for (int i = 0; i < kStates; ++i) {
                double w = 0.0, wx = 0.0;
                for (std::size_t t = 0; t < series.size(); ++t) {
                    if (series.missing[t]) continue;
                    w += post.gamma(t, i);
                    wx += post.gamma(t, i) * series.values[t];
                }
                if (w <= 0.0) continue;
                const double mean = wx / w;
                double wss = 0.0;
                for (std::size_t t = 0; t < series.size(); ++t) {
                    if (series.missing[t]) continue;
                    const double d = series.values[t] - mean;
                    wss += post.gamma(t, i) * d * d;
                }
                m.emissions.mean[i] = mean;
                m.emissions.var[i] = std::max(wss / w, kVarianceFloor);
            }
            if (!post.xi.empty())
                m.coeffs = maximize_transition_coeffs(post.xi, xs_head, m.coeffs);
            m.iterations = it + 1;
        }
        if (!have_best || m.fit_log.back() > best.fit_log.back()) {
            best = std::move(m);
            have_best = true;
        }
    }
    detail::relabel_by_mean(best);
    return best;
}

inline StatePath viterbi(const EpochSeries& series, const TvHmmModel& model) {
    detail::check_series(series);
    const std::size_t n = series.size();
    const auto xs = detail::covariate_track(series, model.covariates);
    const Eigen::MatrixX2d lb = detail::emission_loglik(series, model.emissions);

    Eigen::MatrixX2d delta(n, kStates);
    Eigen::MatrixX2i from(n, kStates);
    for (int i = 0; i < kStates; ++i)
        delta(0, i) = std::log(model.pi[i]) + lb(0, i);
    for (std::size_t t = 1; t < n; ++t) {
        const Eigen::Matrix2d la = log_transition_matrix(model.coeffs, xs[t - 1]);
        for (int j = 0; j < kStates; ++j) {
            int arg = 0;
            double bestv = delta(t - 1, 0) + la(0, j);
            for (int i = 1; i < kStates; ++i) {
                const double v = delta(t - 1, i) + la(i, j);
                if (v > bestv) { bestv = v; arg = i; }
            }
            delta(t, j) = bestv + lb(t, j);
            from(t, j) = arg;
        }
    }

    StatePath path;
    path.states.resize(n);
    int cur = 0;
    for (int i = 1; i < kStates; ++i)
        if (delta(n - 1, i) > delta(n - 1, cur)) cur = i;
    path.states[n - 1] = cur;
    for (std::size_t t = n - 1; t-- > 0;) {
        cur = from(t + 1, cur);
        path.states[t] = cur;
    }
    return path;
}

inline DailyProfile profile24(const TvHmmModel& model, int epoch_minutes, int max_cycles = 1000,
                              double tol = 1e-8) {
    if (epoch_minutes <= 0 || (24 * 60) % epoch_minutes != 0)
        throw std::invalid_argument("epoch_minutes must divide 24 hours");
    const std::size_t n = static_cast<std::size_t>(24 * 60 / epoch_minutes);

    DailyProfile prof;
    prof.epoch_minutes = epoch_minutes;
    prof.p_inactive.assign(n, 0.0);

    std::vector<Eigen::Matrix2d> a(n);
    for (std::size_t g = 0; g < n; ++g)
        a[g] = transition_matrix(model.coeffs, model.covariates.at_hours(prof.clock_hour(g)));

    Eigen::Vector2d p{0.5, 0.5};
    prof.capped = true;
    for (int cycle = 0; cycle < max_cycles; ++cycle) {
        const Eigen::Vector2d before = p;
        for (std::size_t g = 0; g < n; ++g) p = a[g].transpose() * p;
        if ((p - before).cwiseAbs().maxCoeff() < tol) {
            prof.capped = false;
            break;
        }
    }
    for (std::size_t g = 0; g < n; ++g) {
        prof.p_inactive[g] = p[kInactive];
        p = a[g].transpose() * p;
    }
    return prof;
}

// --- Serialization ---

inline nlohmann::ordered_json model_to_json(const TvHmmModel& m) {
    nlohmann::ordered_json j;
    j["pi"] = {m.pi[0], m.pi[1]};
    j["mu"] = {m.emissions.mean[0], m.emissions.mean[1]};
    j["sigma2"] = {m.emissions.var[0], m.emissions.var[1]};
    auto mat = [](const Eigen::Matrix2d& a) {
        return nlohmann::ordered_json{{a(0, 0), a(0, 1)}, {a(1, 0), a(1, 1)}};
    };
    j["c0"] = mat(m.coeffs.c0);
    nlohmann::ordered_json c1;
    for (int i = 0; i < kStates; ++i) {
        nlohmann::ordered_json row;
        for (int k = 0; k < kStates; ++k)
            row.push_back({m.coeffs.c1_sin(i, k), m.coeffs.c1_cos(i, k)});
        c1.push_back(row);
    }
    j["c1"] = c1;
    j["covariates"] = {{"period_hours", m.covariates.period_hours},
                       {"tz_offset_minutes", m.covariates.calendar.tz_offset_minutes}};
    j["fit"] = {{"iterations", m.iterations},
                {"final_loglik", m.fit_log.empty() ? 0.0 : m.fit_log.back()},
                {"converged", m.converged},
                {"seed", m.seed}};
    return j;
}

inline TvHmmModel model_from_json(const nlohmann::ordered_json& j) {
    TvHmmModel m;
    m.pi = {j.at("pi").at(0).get<double>(), j.at("pi").at(1).get<double>()};
    for (int i = 0; i < kStates; ++i) {
        m.emissions.mean[i] = j.at("mu").at(i).get<double>();
        m.emissions.var[i] = j.at("sigma2").at(i).get<double>();
        for (int k = 0; k < kStates; ++k) {
            m.coeffs.c0(i, k) = j.at("c0").at(i).at(k).get<double>();
            m.coeffs.c1_sin(i, k) = j.at("c1").at(i).at(k).at(0).get<double>();
            m.coeffs.c1_cos(i, k) = j.at("c1").at(i).at(k).at(1).get<double>();
        }
    }
    m.covariates.period_hours = j.at("covariates").at("period_hours").get<double>();
    m.covariates.calendar.tz_offset_minutes =
        j.at("covariates").at("tz_offset_minutes").get<int>();
    // Provenance is optional so hand-written parameter files load too.
    if (const auto fit = j.find("fit"); fit != j.end()) {
        m.iterations = fit->at("iterations").get<int>();
        m.converged = fit->at("converged").get<bool>();
        m.seed = fit->at("seed").get<std::uint64_t>();
        m.fit_log = {fit->at("final_loglik").get<double>()};
    }
    return m;
}

inline void write_profile_csv(std::ostream& out, const DailyProfile& p) {
    out << "clock_hour,p_inactive,p_active\n";
    for (std::size_t g = 0; g < p.size(); ++g)
        out << csv::format_double(p.clock_hour(g)) << ',' << csv::format_double(p.p_inactive[g])
            << ',' << csv::format_double(p.p_active(g)) << '\n';
}

}  // namespace tvhmm
}  // namespace actimood

#endif
