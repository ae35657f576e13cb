#ifndef ACTIMOOD_REGRESS_HPP
#define ACTIMOOD_REGRESS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "actimood/csv.hpp"
#include "actimood/features.hpp"
#include "actimood/timeutil.hpp"

namespace actimood {
namespace regress {

using features::FeatureRow;
using features::kFeatureCount;

constexpr double kQidsMin = 0.0;
constexpr double kQidsMax = 27.0;
constexpr double kDepressionThreshold = 10.0;
constexpr int kMinLabeledWeeks = 5;

struct StandardizationParams {
    std::array<double, kFeatureCount> impute{};
    std::array<double, kFeatureCount> mean{};
    std::array<double, kFeatureCount> sd{};
    std::vector<int> kept;  // features with an imputation value and nonzero variance
};

// Imputation value, center, and scale per feature, from training rows only.
inline StandardizationParams standardize_params(std::span<const FeatureRow> train) {
    StandardizationParams p;
    for (int f = 0; f < kFeatureCount; ++f) {
        double sum = 0.0;
        int n = 0;
        for (const FeatureRow& r : train)
            if (r.values[f]) { sum += *r.values[f]; ++n; }
        if (n == 0) continue;  // nothing to impute from; feature dropped
        p.impute[f] = sum / n;

        double mean = 0.0;
        for (const FeatureRow& r : train) mean += r.values[f].value_or(p.impute[f]);
        mean /= static_cast<double>(train.size());
        double ss = 0.0;
        for (const FeatureRow& r : train) {
            const double d = r.values[f].value_or(p.impute[f]) - mean;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / static_cast<double>(train.size()));
        if (sd <= 0.0) continue;  // constant in training, dropped
        p.mean[f] = mean;
        p.sd[f] = sd;
        p.kept.push_back(f);
    }
    return p;
}

inline Eigen::MatrixXd design_matrix(std::span<const FeatureRow> rows,
                                     const StandardizationParams& p) {
    Eigen::MatrixXd x(rows.size(), p.kept.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < p.kept.size(); ++j) {
            const int f = p.kept[j];
            x(i, j) = (rows[i].values[f].value_or(p.impute[f]) - p.mean[f]) / p.sd[f];
        }
    return x;
}

struct LassoFit {
    double lambda = 0.0;
    double intercept = 0.0;
    Eigen::VectorXd beta;
    std::vector<int> active;  // indices into beta
    int iterations = 0;
};

// Minimizes (1/2n)||y - b0 - X b||^2 + lambda*||b||_1 by cyclic coordinate
// descent with soft thresholding; the intercept is unpenalized.
inline LassoFit lasso_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda,
                          double tol = 1e-7, int max_sweeps = 100000) {
    const auto n = x.rows();
    const auto d = x.cols();
    if (n != y.size()) throw std::invalid_argument("design/response length mismatch");
    if (n < 2) throw std::invalid_argument("insufficient training data");
    if (lambda < 0.0) throw std::invalid_argument("negative lambda");

    const Eigen::RowVectorXd xbar = x.colwise().mean();
    const double ybar = y.mean();
    const Eigen::MatrixXd xc = x.rowwise() - xbar;
    const Eigen::VectorXd yc = y.array() - ybar;
    Eigen::VectorXd denom(d);
    for (Eigen::Index j = 0; j < d; ++j) denom[j] = xc.col(j).squaredNorm() / n;

    LassoFit fit;
    fit.lambda = lambda;
    fit.beta = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd resid = yc;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_delta = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            if (denom[j] <= 0.0) continue;
            const double rho = xc.col(j).dot(resid) / n + denom[j] * fit.beta[j];
            const double bj = std::abs(rho) > lambda
                                  ? std::copysign(std::abs(rho) - lambda, rho) / denom[j]
                                  : 0.0;
            const double delta = bj - fit.beta[j];
            if (delta != 0.0) {
                resid -= delta * xc.col(j);
                fit.beta[j] = bj;
                max_delta = std::max(max_delta, std::abs(delta));
            }
        }
        fit.iterations = sweep + 1;
        if (max_delta < tol) break;
    }
    fit.intercept = ybar - xbar * fit.beta;
    for (Eigen::Index j = 0; j < d; ++j)
        if (fit.beta[j] != 0.0) fit.active.push_back(static_cast<int>(j));
    return fit;
}

// Largest subgradient-condition violation; optimal fits stay below 1e-6.
inline double kkt_violation(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                            const LassoFit& fit) {
    const auto n = x.rows();
    const Eigen::VectorXd resid = y.array() - fit.intercept - (x * fit.beta).array();
    double worst = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double g = x.col(j).dot(resid) / n;
        const double v = fit.beta[j] == 0.0
                             ? std::max(0.0, std::abs(g) - fit.lambda)
                             : std::abs(g - fit.lambda * (fit.beta[j] > 0.0 ? 1.0 : -1.0));
        worst = std::max(worst, v);
    }
    return worst;
}

inline double lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const auto n = x.rows();
    const Eigen::RowVectorXd xbar = x.colwise().mean();
    const Eigen::VectorXd yc = y.array() - y.mean();
    double m = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        m = std::max(m, std::abs((x.col(j).array() - xbar[j]).matrix().dot(yc)) / n);
    return m;
}

// Descending log-spaced grid from lambda_max down to lambda_max*min_ratio.
inline std::vector<double> lambda_grid(double lam_max, int size = 50, double min_ratio = 1e-3) {
    if (size < 1 || !(min_ratio > 0.0) || min_ratio > 1.0)
        throw std::invalid_argument("bad lambda grid parameters");
    if (!(lam_max > 0.0)) return {0.0};
    if (size == 1) return {lam_max};
    std::vector<double> grid(size);
    const double step = std::log(min_ratio) / (size - 1);
    for (int k = 0; k < size; ++k) grid[k] = lam_max * std::exp(step * k);
    return grid;
}

inline double clamp_prediction(double v) { return std::clamp(v, kQidsMin, kQidsMax); }

namespace detail {

inline std::vector<FeatureRow> labeled_rows(std::span<const FeatureRow> rows) {
    std::vector<FeatureRow> out;
    for (const FeatureRow& r : rows)
        if (r.qids) out.push_back(r);
    features::sort_rows(out);
    return out;
}

inline Eigen::VectorXd response(std::span<const FeatureRow> rows) {
    Eigen::VectorXd y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = static_cast<double>(*rows[i].qids);
    return y;
}

struct FoldPrediction {
    double predicted = 0.0;
    int active_size = 0;
};

// Train on all rows but `hold`, predict the held-out row. Standardization,
// imputation, and the fit all see training rows only.
inline FoldPrediction loo_predict(const std::vector<FeatureRow>& rows, std::size_t hold,
                                  double lambda) {
    std::vector<FeatureRow> train;
    train.reserve(rows.size() - 1);
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (i != hold) train.push_back(rows[i]);
    const StandardizationParams p = standardize_params(train);
    const Eigen::MatrixXd x = design_matrix(train, p);
    const LassoFit fit = lasso_fit(x, response(train), lambda);
    const Eigen::MatrixXd xt = design_matrix(std::span<const FeatureRow>(&rows[hold], 1), p);
    FoldPrediction out;
    out.predicted = clamp_prediction(fit.intercept + (xt * fit.beta)(0, 0));
    out.active_size = static_cast<int>(fit.active.size());
    return out;
}

inline double loo_mse(const std::vector<FeatureRow>& rows, double lambda) {
    double se = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double err = loo_predict(rows, i, lambda).predicted - static_cast<double>(*rows[i].qids);
        se += err * err;
    }
    return se / static_cast<double>(rows.size());
}

inline double select_lambda_unchecked(const std::vector<FeatureRow>& rows,
                                      const std::vector<double>& grid) {
    double best_lambda = grid.front();
    double best_mse = std::numeric_limits<double>::infinity();
    for (double lam : grid) {  // grid is descending; strict improvement keeps larger lambda on ties
        const double mse = loo_mse(rows, lam);
        if (mse < best_mse) {
            best_mse = mse;
            best_lambda = lam;
        }
    }
    return best_lambda;
}

}  // namespace detail

inline double select_lambda(std::span<const FeatureRow> weeks, const std::vector<double>& grid) {
    if (grid.empty()) throw std::invalid_argument("empty lambda grid");
    const auto rows = detail::labeled_rows(weeks);
    if (static_cast<int>(rows.size()) < kMinLabeledWeeks)
        throw std::invalid_argument("fewer than 5 labeled weeks");
    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    return detail::select_lambda_unchecked(rows, sorted);
}

struct EvalReport {
    std::string participant_id;
    std::string mode;
    std::vector<std::int64_t> week_start_ms;
    std::vector<double> true_qids;
    std::vector<double> predicted_qids;
    double rmse = 0.0;
    double mae = 0.0;
    std::optional<double> pearson_rho;
    std::optional<double> accuracy, sensitivity, specificity;
    double lambda = 0.0;
    double mean_active_set = 0.0;
    int n_weeks = 0;
};

struct ClassificationMetrics {
    std::optional<double> accuracy, sensitivity, specificity;
    int tp = 0, tn = 0, fp = 0, fn = 0;
};

inline ClassificationMetrics classification_metrics(std::span<const double> truth,
                                                    std::span<const double> predicted) {
    if (truth.size() != predicted.size()) throw std::invalid_argument("length mismatch");
    ClassificationMetrics m;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool t = truth[i] > kDepressionThreshold;
        const bool p = predicted[i] > kDepressionThreshold;
        if (t && p) ++m.tp;
        else if (t && !p) ++m.fn;
        else if (!t && p) ++m.fp;
        else ++m.tn;
    }
    const int n = m.tp + m.tn + m.fp + m.fn;
    if (n > 0) m.accuracy = static_cast<double>(m.tp + m.tn) / n;
    if (m.tp + m.fn > 0) m.sensitivity = static_cast<double>(m.tp) / (m.tp + m.fn);
    if (m.tn + m.fp > 0) m.specificity = static_cast<double>(m.tn) / (m.tn + m.fp);
    return m;
}

namespace detail {

inline void fill_metrics(EvalReport& rep) {
    const std::size_t n = rep.true_qids.size();
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = rep.predicted_qids[i] - rep.true_qids[i];
        se += e * e;
        ae += std::abs(e);
    }
    rep.rmse = std::sqrt(se / n);
    rep.mae = ae / n;

    double mt = 0.0, mp = 0.0;
    for (std::size_t i = 0; i < n; ++i) { mt += rep.true_qids[i]; mp += rep.predicted_qids[i]; }
    mt /= n; mp /= n;
    double vt = 0.0, vp = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dt = rep.true_qids[i] - mt, dp = rep.predicted_qids[i] - mp;
        vt += dt * dt; vp += dp * dp; cov += dt * dp;
    }
    if (vt > 0.0 && vp > 0.0) rep.pearson_rho = cov / std::sqrt(vt * vp);

    const ClassificationMetrics cm = classification_metrics(rep.true_qids, rep.predicted_qids);
    rep.accuracy = cm.accuracy;
    rep.sensitivity = cm.sensitivity;
    rep.specificity = cm.specificity;
    rep.n_weeks = static_cast<int>(n);
}

}  // namespace detail

// Leave-one-week-out: lambda chosen by cross-validated MSE on the full set,
// then every week predicted by a model trained on the remaining weeks.
inline EvalReport loo_evaluate(std::span<const FeatureRow> weeks, int grid_size = 50,
                               double min_ratio = 1e-3) {
    const auto rows = detail::labeled_rows(weeks);
    if (static_cast<int>(rows.size()) < kMinLabeledWeeks)
        throw std::invalid_argument("fewer than 5 labeled weeks");

    const StandardizationParams p = standardize_params(rows);
    const auto grid =
        lambda_grid(lambda_max(design_matrix(rows, p), detail::response(rows)), grid_size, min_ratio);
    const double lam = detail::select_lambda_unchecked(rows, grid);

    EvalReport rep;
    rep.participant_id = rows.front().participant_id;
    rep.mode = "loo";
    rep.lambda = lam;
    double active_sum = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto fold = detail::loo_predict(rows, i, lam);
        rep.week_start_ms.push_back(rows[i].week_start_ms);
        rep.true_qids.push_back(static_cast<double>(*rows[i].qids));
        rep.predicted_qids.push_back(fold.predicted);
        active_sum += fold.active_size;
    }
    rep.mean_active_set = active_sum / static_cast<double>(rows.size());
    detail::fill_metrics(rep);
    return rep;
}

// Train on the first ceil(2n/3) weeks (lambda selected by leave-one-out
// within that training block), test on the final weeks.
inline EvalReport prospective_evaluate(std::span<const FeatureRow> weeks, int grid_size = 50,
                                       double min_ratio = 1e-3) {
    const auto rows = detail::labeled_rows(weeks);
    if (static_cast<int>(rows.size()) < kMinLabeledWeeks)
        throw std::invalid_argument("fewer than 5 labeled weeks");
    const std::size_t n = rows.size();
    const std::size_t n_train = (2 * n + 2) / 3;  // ceil(2n/3)
    if (n_train >= n) throw std::invalid_argument("empty prospective test split");

    const std::vector<FeatureRow> train(rows.begin(), rows.begin() + n_train);
    const StandardizationParams p = standardize_params(train);
    const Eigen::MatrixXd xtrain = design_matrix(train, p);
    const Eigen::VectorXd ytrain = detail::response(train);
    const auto grid = lambda_grid(lambda_max(xtrain, ytrain), grid_size, min_ratio);
    const double lam = detail::select_lambda_unchecked(train, grid);
    const LassoFit fit = lasso_fit(xtrain, ytrain, lam);

    EvalReport rep;
    rep.participant_id = rows.front().participant_id;
    rep.mode = "prospective";
    rep.lambda = lam;
    rep.mean_active_set = static_cast<double>(fit.active.size());
    for (std::size_t i = n_train; i < n; ++i) {
        const Eigen::MatrixXd xt = design_matrix(std::span<const FeatureRow>(&rows[i], 1), p);
        rep.week_start_ms.push_back(rows[i].week_start_ms);
        rep.true_qids.push_back(static_cast<double>(*rows[i].qids));
        rep.predicted_qids.push_back(clamp_prediction(fit.intercept + (xt * fit.beta)(0, 0)));
    }
    detail::fill_metrics(rep);
    return rep;
}

// --- Serialization ---

inline nlohmann::ordered_json report_to_json(const EvalReport& rep,
                                             const timeutil::LocalCalendar& cal) {
    nlohmann::ordered_json j;
    j["participant_id"] = rep.participant_id;
    j["mode"] = rep.mode;
    j["n_weeks"] = rep.n_weeks;
    j["lambda"] = rep.lambda;
    j["mean_active_set"] = rep.mean_active_set;
    j["rmse"] = rep.rmse;
    j["mae"] = rep.mae;
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    j["pearson_rho"] = opt(rep.pearson_rho);
    j["accuracy"] = opt(rep.accuracy);
    j["sensitivity"] = opt(rep.sensitivity);
    j["specificity"] = opt(rep.specificity);
    nlohmann::ordered_json weeks = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < rep.true_qids.size(); ++i)
        weeks.push_back({{"week_start", timeutil::format_local_date(rep.week_start_ms[i], cal)},
                         {"true_qids", rep.true_qids[i]},
                         {"predicted_qids", rep.predicted_qids[i]}});
    j["weeks"] = weeks;
    return j;
}

inline void write_predictions_csv(std::ostream& out, std::span<const EvalReport> reports,
                                  const timeutil::LocalCalendar& cal) {
    out << "participant_id,week_start,true_qids,predicted_qids\n";
    for (const EvalReport& rep : reports)
        for (std::size_t i = 0; i < rep.true_qids.size(); ++i)
            out << rep.participant_id << ',' << timeutil::format_local_date(rep.week_start_ms[i], cal)
                << ',' << csv::format_double(rep.true_qids[i]) << ','
                << csv::format_double(rep.predicted_qids[i]) << '\n';
}

}  // namespace regress
}  // namespace actimood

#endif
