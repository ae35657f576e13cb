#ifndef ACTIMOOD_OPTIM_HPP
#define ACTIMOOD_OPTIM_HPP

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <utility>

namespace actimood {
namespace optim {

struct MaximizeResult {
    Eigen::VectorXd x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Dense BFGS ascent with Armijo backtracking. `fn(x, grad)` returns the
// objective and fills its gradient. Monotone: every accepted step improves
// the objective, and if no improving step exists the current point is kept.
template <class Fn>
MaximizeResult bfgs_maximize(Fn&& fn, Eigen::VectorXd x0, int max_iter = 200,
                             double grad_tol = 1e-6) {
    const auto n = x0.size();
    MaximizeResult res;
    res.x = std::move(x0);

    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd grad(n), grad_new(n);
    res.value = fn(res.x, grad);

    const double armijo = 1e-4;
    for (int iter = 0; iter < max_iter; ++iter) {
        res.iterations = iter;
        if (grad.lpNorm<Eigen::Infinity>() < grad_tol) {
            res.converged = true;
            return res;
        }

        Eigen::VectorXd dir = h * grad;
        double slope = grad.dot(dir);
        if (!(slope > 0.0)) {  // curvature info went bad, fall back to steepest ascent
            h.setIdentity();
            dir = grad;
            slope = grad.squaredNorm();
            if (!(slope > 0.0)) { res.converged = true; return res; }
        }

        double step = 1.0;
        double f_new = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd x_new;
        bool accepted = false;
        while (step > 1e-14) {
            x_new = res.x + step * dir;
            f_new = fn(x_new, grad_new);
            if (std::isfinite(f_new) && f_new >= res.value + armijo * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) return res;

        Eigen::VectorXd s = x_new - res.x;
        Eigen::VectorXd y = grad - grad_new;  // minimization curvature pair for -f
        const double ys = y.dot(s);
        if (ys > 1e-12) {
            const double rho = 1.0 / ys;
            Eigen::MatrixXd left = Eigen::MatrixXd::Identity(n, n) - rho * s * y.transpose();
            h = left * h * left.transpose() + rho * s * s.transpose();
        }
        res.x = std::move(x_new);
        res.value = f_new;
        grad = grad_new;
    }
    res.iterations = max_iter;
    return res;
}

}  // namespace optim
}  // namespace actimood

#endif
