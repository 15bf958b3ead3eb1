#ifndef NNMIX_ESTIMATE_HPP
#define NNMIX_ESTIMATE_HPP

#include <vector>

#include <Eigen/Dense>

#include "nnmix/nce.hpp"
#include "nnmix/optim.hpp"

namespace nnmix {

/// Fitted (theta, c) with the optimizer's diagnostics.
struct EstimationResult {
    Eigen::MatrixXd theta;  // K x d
    Eigen::VectorXd c;      // K
    double objective = 0.0;
    bool converged = false;
    int iterations = 0;
    int best_start = 0;
    std::vector<StartSummary> starts;
    std::vector<double> trace;
};

/// Default start sampler: theta entries 0.1 * N(0, 1) and
/// c_k = log(1/K) - log(nu + 1) + U(-0.5, 0.5).
InitSampler default_init_sampler(int num_components, int dim, double nu);

/// Multi-start maximization of a contrast objective over K components. The
/// gradient tolerance is applied to the gradient divided by N.
EstimationResult estimate(const ContrastSet& contrast, int num_components, OptimizerConfig config,
                          const InitSampler& init);

/// Mixture NCE / multi-noise NCE fit with the default sampler unless one is given.
EstimationResult estimate_mixture(const NceProblem& problem, int num_components, const OptimizerConfig& config,
                                  const InitSampler& init = {});

/// Deep-transfer fit over frozen features with pretraining data as noise.
EstimationResult estimate_deep_transfer(const DeepTransferProblem& problem, int num_components,
                                        const OptimizerConfig& config, const InitSampler& init = {});

}  // namespace nnmix

#endif
