#include "nnmix/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>

#include "nnmix/parallel.hpp"

namespace nnmix {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// N x K matrix of log pi_k + log N(x_t; mu_k, diag(var_k)).
Eigen::MatrixXd joint_log_densities(const GmmParams& params, const Eigen::MatrixXd& data) {
    const Eigen::Index n = data.rows();
    const int k = params.num_components();
    Eigen::MatrixXd out(n, k);
    const double log_two_pi = std::log(2.0 * std::numbers::pi);
    for (int j = 0; j < k; ++j) {
        const Eigen::RowVectorXd mu = params.means.row(j);
        const Eigen::RowVectorXd inv_var = params.variances.row(j).cwiseInverse();
        const double log_norm = -0.5 * (static_cast<double>(params.dim()) * log_two_pi +
                                        params.variances.row(j).array().log().sum());
        const double log_weight = std::log(params.weights(j));
        out.col(j) = ((data.rowwise() - mu).array().square().rowwise() * inv_var.array()).rowwise().sum() * -0.5;
        out.col(j).array() += log_norm + log_weight;
    }
    return out;
}

Eigen::RowVectorXd column_variances(const Eigen::MatrixXd& data) {
    const Eigen::RowVectorXd mean = data.colwise().mean();
    return (data.rowwise() - mean).array().square().colwise().mean();
}

// k-means++ seeding of the means; uniform weights and pooled variance.
GmmParams initialize(const Eigen::MatrixXd& data, int k, CovarianceType covariance, double floor,
                     std::mt19937_64& rng) {
    const Eigen::Index n = data.rows();
    GmmParams p;
    p.covariance = covariance;
    p.weights = Eigen::VectorXd::Constant(k, 1.0 / k);
    p.means.resize(k, data.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    p.means.row(0) = data.row(pick(rng));
    Eigen::VectorXd dist2 = (data.rowwise() - p.means.row(0)).rowwise().squaredNorm();
    for (int j = 1; j < k; ++j) {
        const double total = dist2.sum();
        Eigen::Index chosen = pick(rng);
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng);
            for (Eigen::Index t = 0; t < n; ++t) {
                target -= dist2(t);
                if (target <= 0.0) {
                    chosen = t;
                    break;
                }
            }
        }
        p.means.row(j) = data.row(chosen);
        dist2 = dist2.cwiseMin((data.rowwise() - p.means.row(j)).rowwise().squaredNorm());
    }
    Eigen::RowVectorXd pooled = column_variances(data).cwiseMax(floor);
    if (covariance == CovarianceType::isotropic) {
        pooled.setConstant(pooled.mean());
    }
    p.variances = pooled.replicate(k, 1);
    return p;
}

struct StartOutcome {
    std::optional<GmmParams> params;
    std::vector<double> trace;
    bool converged = false;
};

StartOutcome run_start(const Eigen::MatrixXd& data, int k, CovarianceType covariance, const EmConfig& config,
                       std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Eigen::Index n = data.rows();
    for (int attempt = 0; attempt <= config.max_reinit; ++attempt) {
        GmmParams p = initialize(data, k, covariance, config.variance_floor, rng);
        StartOutcome out;
        bool emptied = false;
        for (int iter = 0; iter < config.max_iters; ++iter) {
            // E-step
            const Eigen::MatrixXd joint = joint_log_densities(p, data);
            const Eigen::VectorXd row_lse = row_log_sum_exp(joint);
            const double ll = row_lse.sum();
            if (!std::isfinite(ll)) {
                emptied = true;
                break;
            }
            out.trace.push_back(ll);
            if (out.trace.size() >= 2) {
                const double gain = ll - out.trace[out.trace.size() - 2];
                if (gain <= config.loglik_tol * std::abs(ll)) {
                    out.converged = true;
                    break;
                }
            }
            const Eigen::MatrixXd resp = (joint.colwise() - row_lse).array().exp().matrix();

            // M-step
            const Eigen::VectorXd nk = resp.colwise().sum().transpose();
            if ((nk.array() < 1.0).any()) {
                emptied = true;
                break;
            }
            p.weights = nk / static_cast<double>(n);
            p.means = (resp.transpose() * data).array().colwise() / nk.array();
            for (int j = 0; j < k; ++j) {
                const Eigen::MatrixXd centered = data.rowwise() - p.means.row(j);
                Eigen::RowVectorXd var = (centered.array().square().colwise() * resp.col(j).array()).colwise().sum() /
                                         nk(j);
                if (covariance == CovarianceType::isotropic) {
                    var.setConstant(var.mean());
                }
                p.variances.row(j) = var.cwiseMax(config.variance_floor);
            }
        }
        if (!emptied) {
            out.params = std::move(p);
            return out;
        }
    }
    return {};
}

}  // namespace

const char* to_string(CovarianceType type) {
    return type == CovarianceType::diagonal ? "diagonal" : "isotropic";
}

CovarianceType parse_covariance_type(const std::string& name) {
    if (name == "diagonal") {
        return CovarianceType::diagonal;
    }
    if (name == "isotropic") {
        return CovarianceType::isotropic;
    }
    throw std::invalid_argument("unknown covariance type '" + name + "' (expected diagonal or isotropic)");
}

void GmmParams::validate() const {
    const auto k = weights.size();
    if (k < 1 || means.rows() != k || variances.rows() != k || variances.cols() != means.cols()) {
        throw std::invalid_argument("GmmParams: inconsistent shapes");
    }
    if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-9) {
        throw std::invalid_argument("GmmParams: weights must lie on the simplex");
    }
    if (!means.allFinite() || !variances.allFinite() || !((variances.array() > 0.0).all())) {
        throw std::invalid_argument("GmmParams: means must be finite and variances positive");
    }
}

EmResult em_fit(const Eigen::MatrixXd& data, int num_components, CovarianceType covariance, const EmConfig& config) {
    if (num_components < 1) {
        throw std::invalid_argument("em_fit: K must be >= 1");
    }
    if (data.rows() <= num_components) {
        throw std::invalid_argument("em_fit: need N > K (N = " + std::to_string(data.rows()) +
                                    ", K = " + std::to_string(num_components) + ")");
    }
    if (data.cols() < 1 || !data.allFinite()) {
        throw std::invalid_argument("em_fit: data must be finite with at least one column");
    }
    if (config.n_starts < 1 || config.max_iters < 1 || !(config.variance_floor > 0.0)) {
        throw std::invalid_argument("em_fit: invalid configuration");
    }

    EmResult result;
    int best = -1;
    double best_ll = kNegInf;
    for (int s = 0; s < config.n_starts; ++s) {
        StartOutcome outcome = run_start(data, num_components, covariance, config,
                                         derive_seed(config.seed, static_cast<std::uint64_t>(s)));
        const double ll = outcome.params ? outcome.trace.back() : kNegInf;
        result.per_start_loglik.push_back(ll);
        if (outcome.params && ll > best_ll) {
            best = s;
            best_ll = ll;
            result.params = std::move(*outcome.params);
            result.loglik_trace = std::move(outcome.trace);
            result.converged = outcome.converged;
        }
    }
    if (best < 0) {
        throw EmError("em_fit: all " + std::to_string(config.n_starts) +
                      " starts failed (components emptied after every re-initialization)");
    }
    result.best_start = best;
    result.loglik = gmm_log_likelihood(result.params, data);
    return result;
}

double gmm_log_likelihood(const GmmParams& params, const Eigen::MatrixXd& data) {
    params.validate();
    if (data.cols() != params.dim()) {
        throw std::invalid_argument("gmm_log_likelihood: dimension mismatch");
    }
    return row_log_sum_exp(joint_log_densities(params, data)).sum();
}

PosteriorMatrix gmm_posterior(const GmmParams& params, const Eigen::MatrixXd& data) {
    params.validate();
    if (data.cols() != params.dim()) {
        throw std::invalid_argument("gmm_posterior: dimension mismatch");
    }
    return PosteriorMatrix::from_logits(joint_log_densities(params, data));
}

MixtureModel gmm_to_natural(const GmmParams& params) {
    params.validate();
    if (params.dim() != 1) {
        throw std::invalid_argument("gmm_to_natural: only 1-D mixtures map onto (x^2, x) features");
    }
    std::vector<Component> comps;
    for (int k = 0; k < params.num_components(); ++k) {
        comps.push_back(gaussian_natural_params(
            {params.means(k, 0), params.variances(k, 0), std::min(params.weights(k), 1.0)}));
    }
    return MixtureModel(comps, "quadratic");
}

}  // namespace nnmix
