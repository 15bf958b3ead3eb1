#ifndef NNMIX_OPTIM_HPP
#define NNMIX_OPTIM_HPP

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nnmix {

struct LineSearchConfig {
    double c1 = 1e-4;   // sufficient increase
    double c2 = 0.1;    // strong curvature
    int max_evals = 40;
};

struct OptimizerConfig {
    int max_iters = 2000;
    /// Stop when ||grad||_inf * gradient_scale <= grad_tol.
    double grad_tol = 1e-6;
    double gradient_scale = 1.0;
    LineSearchConfig line_search;
    /// Reset the search direction every this many iterations; -1 selects
    /// 10 * dimension and 0 disables periodic resets.
    int restart_every = -1;
    int n_starts = 1;
    std::uint64_t seed = 0;
    /// Worker threads for multi_start; starts are independent.
    int threads = 1;

    /// Throws std::invalid_argument when the settings are inconsistent.
    void validate() const;
};

/// Objective to maximize. Returns f(x) and writes the gradient into `grad`.
using ObjectiveFn = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

/// Draws one starting point.
using InitSampler = std::function<Eigen::VectorXd(std::mt19937_64& rng)>;

enum class StopReason {
    gradient_tolerance,
    max_iterations,
    non_finite,
    line_search_failure,
};

const char* to_string(StopReason reason);

struct StartSummary {
    double value = 0.0;
    bool converged = false;
    bool failed = false;
    int iterations = 0;
    StopReason reason = StopReason::max_iterations;
    std::string message;
};

struct OptimResult {
    Eigen::VectorXd x_best;
    double f_best = 0.0;
    bool converged = false;
    int iterations = 0;
    StopReason reason = StopReason::max_iterations;
    std::string message;
    /// Objective at the start point and after every accepted step of the best start.
    std::vector<double> trace;
    std::vector<StartSummary> per_start;
    int best_start = 0;
};

/// Thrown by multi_start when no start produced a usable result.
class OptimizationError : public std::runtime_error {
public:
    OptimizationError(const std::string& what, std::vector<StartSummary> starts)
        : std::runtime_error(what), starts_(std::move(starts)) {}
    const std::vector<StartSummary>& starts() const { return starts_; }

private:
    std::vector<StartSummary> starts_;
};

/// Polak-Ribiere+ nonlinear conjugate gradient ascent with a strong-Wolfe
/// line search. When objective values stop resolving progress it switches
/// to an approximate-Wolfe search on slopes alone, with values allowed to
/// rise by at most 1e-12 * |f|. Never throws for numerical trouble: a start that hits a
/// non-finite value or a failed line search stops at its last accepted
/// point, unconverged. A start is marked failed only when the objective is
/// not finite at its start point.
OptimResult maximize(const ObjectiveFn& objective, const Eigen::VectorXd& x0, const OptimizerConfig& config);

/// Runs config.n_starts maximizations from points drawn by `init` with an
/// RNG seeded from config.seed and keeps the best non-failed one. Throws
/// OptimizationError when every start failed. The start
/// points are drawn before any start runs, so results do not depend on
/// config.threads.
OptimResult multi_start(const ObjectiveFn& objective, const InitSampler& init, const OptimizerConfig& config);

}  // namespace nnmix

#endif
