#ifndef NNMIX_EM_HPP
#define NNMIX_EM_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnmix/cluster.hpp"
#include "nnmix/model.hpp"

namespace nnmix {

enum class CovarianceType { diagonal, isotropic };

const char* to_string(CovarianceType type);
CovarianceType parse_covariance_type(const std::string& name);

/// Gaussian mixture in moment form with diagonal or isotropic covariances.
/// `variances` is K x d; for isotropic fits every row is constant.
struct GmmParams {
    Eigen::VectorXd weights;
    Eigen::MatrixXd means;
    Eigen::MatrixXd variances;
    CovarianceType covariance = CovarianceType::diagonal;

    int num_components() const { return static_cast<int>(weights.size()); }
    int dim() const { return static_cast<int>(means.cols()); }
    void validate() const;
};

struct EmConfig {
    int max_iters = 1000;
    /// Stop once the per-iteration log-likelihood gain is below loglik_tol * |loglik|.
    double loglik_tol = 1e-10;
    double variance_floor = 1e-6;
    int n_starts = 1;
    std::uint64_t seed = 0;
    /// Re-initializations allowed per start after an emptied component.
    int max_reinit = 10;
};

struct EmResult {
    GmmParams params;
    double loglik = 0.0;
    std::vector<double> loglik_trace;  // best start, one entry per E-step
    bool converged = false;
    int best_start = 0;
    std::vector<double> per_start_loglik;  // -inf for failed starts
};

class EmError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Maximum-likelihood mixture fit by EM with k-means++ seeded starts.
/// Throws std::invalid_argument for N <= K or non-finite data and EmError
/// when every start fails.
EmResult em_fit(const Eigen::MatrixXd& data, int num_components, CovarianceType covariance, const EmConfig& config);

/// Total log-likelihood of `data` under `params`.
double gmm_log_likelihood(const GmmParams& params, const Eigen::MatrixXd& data);

/// Bayes posterior pi_k N(x; mu_k, Sigma_k) / sum_j pi_j N(x; mu_j, Sigma_j).
PosteriorMatrix gmm_posterior(const GmmParams& params, const Eigen::MatrixXd& data);

/// Natural parameters under f(x) = (x^2, x) for a 1-D mixture.
/// Throws std::invalid_argument when d != 1.
MixtureModel gmm_to_natural(const GmmParams& params);

}  // namespace nnmix

#endif
