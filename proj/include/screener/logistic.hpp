#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "screener/error.hpp"
#include "screener/feature_matrix.hpp"

namespace screener {

struct LogisticParams {
    double l2 = 1e-4;     // ridge penalty on coefficients; the intercept is free
    int max_iter = 200;
    double tol = 1e-6;    // convergence when the gradient max-norm drops below this

    void validate() const {
        if (l2 < 0.0) throw Error(ErrorKind::parameter, "l2 must be >= 0");
        if (max_iter < 1) throw Error(ErrorKind::parameter, "max_iter must be >= 1");
        if (!(tol > 0.0)) throw Error(ErrorKind::parameter, "tol must be > 0");
    }
};

struct LogisticModel {
    std::vector<double> coefficients;
    double intercept = 0.0;
    std::vector<std::string> feature_names;
    LogisticParams params;
    bool converged = false;
    int iterations = 0;
    double gradient_norm = 0.0;
};

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// -log p stable in both tails: y=1 -> log(1+e^-z), y=0 -> log(1+e^z).
inline double log_loss(double z, bool y) {
    const double m = y ? -z : z;
    return m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
}

// Cholesky solve of the symmetric positive-definite system a x = b (in place).
inline std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
        if (d <= 0.0) throw Error(ErrorKind::training, "normal equations not positive definite");
        const double root = std::sqrt(d);
        a[j * n + j] = root;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / root;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= a[k * n + ii] * b[k];
        b[ii] = s / a[ii * n + ii];
    }
    return b;
}

}  // namespace detail

// theta holds the coefficients followed by the intercept (size cols + 1).
inline double logistic_objective(const FeatureMatrix& m, const std::vector<std::uint32_t>& rows,
                                 const std::vector<double>& theta, double l2) {
    const std::size_t p = m.cols();
    if (theta.size() != p + 1) throw Error(ErrorKind::contract, "theta size mismatch");
    double loss = 0.0;
    for (const auto r : rows) {
        const float* x = m.row_ptr(r);
        double z = theta[p];
        for (std::size_t j = 0; j < p; ++j) z += theta[j] * x[j];
        loss += m.weights[r] * detail::log_loss(z, m.labels[r] != 0);
    }
    double penalty = 0.0;
    for (std::size_t j = 0; j < p; ++j) penalty += theta[j] * theta[j];
    return loss + 0.5 * l2 * penalty;
}

inline std::vector<double> logistic_gradient(const FeatureMatrix& m,
                                             const std::vector<std::uint32_t>& rows,
                                             const std::vector<double>& theta, double l2) {
    const std::size_t p = m.cols();
    if (theta.size() != p + 1) throw Error(ErrorKind::contract, "theta size mismatch");
    std::vector<double> grad(p + 1, 0.0);
    for (const auto r : rows) {
        const float* x = m.row_ptr(r);
        double z = theta[p];
        for (std::size_t j = 0; j < p; ++j) z += theta[j] * x[j];
        const double resid = m.weights[r] * (detail::sigmoid(z) - (m.labels[r] ? 1.0 : 0.0));
        for (std::size_t j = 0; j < p; ++j) grad[j] += resid * x[j];
        grad[p] += resid;
    }
    for (std::size_t j = 0; j < p; ++j) grad[j] += l2 * theta[j];
    return grad;
}

// Damped Newton on the penalized weighted log-likelihood. Deterministic:
// full-batch updates, no randomness anywhere.
inline LogisticModel train_logistic(const FeatureMatrix& m, const LogisticParams& params = {},
                                    std::vector<std::uint32_t> rows = {}) {
    params.validate();
    if (m.cols() == 0) throw Error(ErrorKind::training, "no features to train on");
    if (rows.empty()) {
        rows.resize(m.rows());
        for (std::uint32_t i = 0; i < rows.size(); ++i) rows[i] = i;
    }
    bool has_pos = false, has_neg = false;
    for (const auto r : rows) {
        if (!(m.weights[r] > 0.0)) {
            throw Error(ErrorKind::parameter, "sample weights must be > 0");
        }
        (m.labels[r] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
        throw Error(ErrorKind::training, "training data must contain both classes");
    }

    const std::size_t p = m.cols();
    const std::size_t n = p + 1;
    std::vector<double> theta(n, 0.0);
    double objective = logistic_objective(m, rows, theta, params.l2);

    LogisticModel model;
    model.feature_names = m.feature_names;
    model.params = params;

    std::vector<double> hessian(n * n);
    for (int iter = 0; iter < params.max_iter; ++iter) {
        const auto grad = logistic_gradient(m, rows, theta, params.l2);
        double grad_norm = 0.0;
        for (const double g : grad) grad_norm = std::max(grad_norm, std::abs(g));
        model.iterations = iter;
        model.gradient_norm = grad_norm;
        if (grad_norm <= params.tol) {
            model.converged = true;
            break;
        }

        std::fill(hessian.begin(), hessian.end(), 0.0);
        for (const auto r : rows) {
            const float* x = m.row_ptr(r);
            double z = theta[p];
            for (std::size_t j = 0; j < p; ++j) z += theta[j] * x[j];
            const double s = detail::sigmoid(z);
            const double curv = m.weights[r] * s * (1.0 - s);
            for (std::size_t j = 0; j < p; ++j) {
                const double cj = curv * x[j];
                for (std::size_t k = 0; k <= j; ++k) hessian[j * n + k] += cj * x[k];
                hessian[p * n + j] += cj;
            }
            hessian[p * n + p] += curv;
        }
        for (std::size_t j = 0; j < p; ++j) hessian[j * n + j] += params.l2;
        hessian[p * n + p] += 1e-10;  // keep the system solvable near saturation
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t k = j + 1; k < n; ++k) hessian[j * n + k] = hessian[k * n + j];
        }

        // Plain Newton first; if the system is indefinite or no step length
        // descends (curvature underflows once the fit saturates), retry with
        // growing diagonal damping, which bends the step toward plain
        // gradient descent and guarantees progress.
        double max_diag = 0.0;
        for (std::size_t j = 0; j < n; ++j) max_diag = std::max(max_diag, hessian[j * n + j]);
        double damping = 0.0;
        bool accepted = false;
        for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
            std::vector<double> system = hessian;
            for (std::size_t j = 0; j < n; ++j) system[j * n + j] += damping;
            std::vector<double> step;
            try {
                step = detail::solve_spd(std::move(system), grad);
            } catch (const Error&) {
                damping = damping == 0.0 ? std::max(1e-8, 1e-6 * max_diag) : damping * 100.0;
                continue;
            }
            double scale = 1.0;
            for (int halving = 0; halving < 40 && !accepted; ++halving) {
                std::vector<double> trial(n);
                for (std::size_t j = 0; j < n; ++j) trial[j] = theta[j] - scale * step[j];
                const double trial_objective = logistic_objective(m, rows, trial, params.l2);
                if (trial_objective <= objective) {
                    theta = std::move(trial);
                    objective = trial_objective;
                    accepted = true;
                }
                scale *= 0.5;
            }
            damping = damping == 0.0 ? std::max(1e-8, 1e-6 * max_diag) : damping * 100.0;
        }
        if (!accepted) break;  // no descent direction left; report the final gradient
    }
    if (!model.converged) {
        const auto grad = logistic_gradient(m, rows, theta, params.l2);
        double grad_norm = 0.0;
        for (const double g : grad) grad_norm = std::max(grad_norm, std::abs(g));
        model.gradient_norm = grad_norm;
        model.converged = grad_norm <= params.tol;
        model.iterations = params.max_iter;
    }

    model.coefficients.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(p));
    model.intercept = theta[p];
    return model;
}

inline double predict_logistic(const LogisticModel& model, const float* row,
                               std::size_t n_values) {
    if (n_values != model.coefficients.size()) {
        throw Error(ErrorKind::contract, "feature row does not match logistic model");
    }
    double z = model.intercept;
    for (std::size_t j = 0; j < n_values; ++j) z += model.coefficients[j] * row[j];
    return detail::sigmoid(z);
}

inline double predict_logistic(const LogisticModel& model, const std::vector<float>& row) {
    return predict_logistic(model, row.data(), row.size());
}

inline nlohmann::json to_json(const LogisticModel& model) {
    return nlohmann::json{{"format_version", 1},
                          {"type", "logistic"},
                          {"feature_names", model.feature_names},
                          {"coefficients", model.coefficients},
                          {"intercept", model.intercept},
                          {"l2", model.params.l2},
                          {"converged", model.converged}};
}

inline LogisticModel logistic_from_json(const nlohmann::json& j) {
    if (j.at("type").get<std::string>() != "logistic") {
        throw Error(ErrorKind::schema, "not a logistic model");
    }
    LogisticModel model;
    model.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    model.coefficients = j.at("coefficients").get<std::vector<double>>();
    model.intercept = j.at("intercept").get<double>();
    model.params.l2 = j.at("l2").get<double>();
    model.converged = j.at("converged").get<bool>();
    return model;
}

}  // namespace screener
