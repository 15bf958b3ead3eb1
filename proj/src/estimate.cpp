#include "nnmix/estimate.hpp"

#include <cmath>
#include <stdexcept>

#include "nnmix/model.hpp"

namespace nnmix {

InitSampler default_init_sampler(int num_components, int dim, double nu) {
    if (num_components < 1 || dim < 0 || !(nu > 0.0)) {
        throw std::invalid_argument("default_init_sampler: invalid shape or noise ratio");
    }
    return [num_components, dim, nu](std::mt19937_64& rng) {
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> jitter(-0.5, 0.5);
        const double c0 = std::log(1.0 / num_components) - std::log(nu + 1.0);
        Eigen::VectorXd x(static_cast<Eigen::Index>(num_components) * (dim + 1));
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(num_components) * dim; ++i) {
            x(i) = 0.1 * normal(rng);
        }
        for (int k = 0; k < num_components; ++k) {
            x(static_cast<Eigen::Index>(num_components) * dim + k) = c0 + jitter(rng);
        }
        return x;
    };
}

EstimationResult estimate(const ContrastSet& contrast, int num_components, OptimizerConfig config,
                          const InitSampler& init) {
    if (num_components < 1) {
        throw std::invalid_argument("estimate: K must be >= 1");
    }
    config.gradient_scale = 1.0 / contrast.num_data();
    const ObjectiveFn objective = [&contrast, num_components](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
        return contrast.evaluate(x, num_components, &grad);
    };
    OptimResult run = multi_start(objective, init, config);

    EstimationResult out;
    const MixtureModel fitted = MixtureModel::unpack(run.x_best, num_components, contrast.dim());
    out.theta = fitted.theta();
    out.c = fitted.c();
    out.objective = run.f_best;
    out.converged = run.converged;
    out.iterations = run.iterations;
    out.best_start = run.best_start;
    out.starts = std::move(run.per_start);
    out.trace = std::move(run.trace);
    return out;
}

EstimationResult estimate_mixture(const NceProblem& problem, int num_components, const OptimizerConfig& config,
                                  const InitSampler& init) {
    const InitSampler sampler = init ? init : default_init_sampler(num_components, problem.dim(), problem.nu());
    return estimate(problem.contrast(), num_components, config, sampler);
}

EstimationResult estimate_deep_transfer(const DeepTransferProblem& problem, int num_components,
                                        const OptimizerConfig& config, const InitSampler& init) {
    double total = 0.0;
    for (double m : problem.counts()) {
        total += m;
    }
    const InitSampler sampler =
        init ? init : default_init_sampler(num_components, problem.dim(), total / problem.num_data());
    return estimate(problem.contrast(), num_components, config, sampler);
}

}  // namespace nnmix
