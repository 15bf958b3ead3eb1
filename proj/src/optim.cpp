#include "nnmix/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include "nnmix/parallel.hpp"

namespace nnmix {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Internally the objective is minimized: phi(x) = -f(x).
struct Probe {
    double alpha = 0.0;
    double phi = kInf;
    double dphi = 0.0;
    Eigen::VectorXd grad;  // gradient of phi at x + alpha * d
    bool finite = false;
};

class LineFunction {
public:
    LineFunction(const ObjectiveFn& objective, const Eigen::VectorXd& x, const Eigen::VectorXd& dir)
        : objective_(objective), x_(x), dir_(dir) {}

    Probe operator()(double alpha) {
        Probe p;
        p.alpha = alpha;
        Eigen::VectorXd grad(x_.size());
        double f = 0.0;
        try {
            f = objective_(x_ + alpha * dir_, grad);
        } catch (const std::exception&) {
            return p;
        }
        ++evals;
        if (!std::isfinite(f) || grad.size() != x_.size() || !grad.allFinite()) {
            return p;
        }
        p.phi = -f;
        p.grad = -grad;
        p.dphi = p.grad.dot(dir_);
        p.finite = true;
        return p;
    }

    int evals = 0;

private:
    const ObjectiveFn& objective_;
    const Eigen::VectorXd& x_;
    const Eigen::VectorXd& dir_;
};

// Minimizer of the cubic matching values and slopes at a and b, if it exists.
std::optional<double> cubic_minimizer(const Probe& a, const Probe& b) {
    if (!a.finite || !b.finite || a.alpha == b.alpha) {
        return std::nullopt;
    }
    const double d1 = a.dphi + b.dphi - 3.0 * (a.phi - b.phi) / (a.alpha - b.alpha);
    const double disc = d1 * d1 - a.dphi * b.dphi;
    if (!(disc >= 0.0)) {
        return std::nullopt;
    }
    const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
    const double denom = b.dphi - a.dphi + 2.0 * d2;
    if (denom == 0.0) {
        return std::nullopt;
    }
    const double alpha = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / denom;
    if (!std::isfinite(alpha)) {
        return std::nullopt;
    }
    return alpha;
}

class StrongWolfeSearch {
public:
    StrongWolfeSearch(LineFunction& line, const LineSearchConfig& config, const Probe& origin)
        : line_(line), config_(config), origin_(origin) {}

    // Returns an accepted probe, or nullopt when no step with sufficient decrease was found.
    std::optional<Probe> run(double alpha_init) {
        Probe prev = origin_;
        double alpha = alpha_init;
        for (int i = 0; i < config_.max_evals; ++i) {
            Probe cur = line_(alpha);
            if (!cur.finite || !sufficient(cur) || (i > 0 && cur.phi >= prev.phi)) {
                return polish(zoom(prev, cur));
            }
            if (curvature(cur)) {
                return polish(cur);
            }
            if (cur.dphi >= 0.0) {
                return polish(zoom(cur, prev));
            }
            // Extrapolate.
            const double lo = cur.alpha + 0.1 * (cur.alpha - prev.alpha);
            const double hi = cur.alpha * 10.0;
            double next = cubic_minimizer(prev, cur).value_or(hi);
            next = std::clamp(std::isfinite(next) ? next : hi, lo, hi);
            prev = std::move(cur);
            alpha = next;
        }
        return prev.alpha > 0.0 ? std::optional<Probe>(prev) : std::nullopt;
    }

private:
    bool sufficient(const Probe& p) const {
        return p.finite && p.phi <= origin_.phi + config_.c1 * p.alpha * origin_.dphi;
    }
    bool curvature(const Probe& p) const { return std::abs(p.dphi) <= -config_.c2 * origin_.dphi; }

    // `lo` satisfies sufficient decrease with the lowest phi seen; the
    // minimizer lies between lo and hi.
    std::optional<Probe> zoom(Probe lo, Probe hi) {
        for (int j = 0; j < config_.max_evals; ++j) {
            const double a = std::min(lo.alpha, hi.alpha);
            const double b = std::max(lo.alpha, hi.alpha);
            const double width = b - a;
            if (width <= 1e-14 * std::max(1.0, b)) {
                break;
            }
            double alpha = 0.5 * (a + b);
            if (hi.finite) {
                if (auto cm = cubic_minimizer(lo, hi)) {
                    alpha = std::clamp(*cm, a + 0.05 * width, b - 0.05 * width);
                }
            }
            Probe cur = line_(alpha);
            if (!cur.finite || !sufficient(cur) || cur.phi >= lo.phi) {
                hi = std::move(cur);
                continue;
            }
            if (curvature(cur)) {
                return cur;
            }
            if (cur.dphi * (hi.alpha - lo.alpha) >= 0.0) {
                hi = lo;
            }
            lo = std::move(cur);
        }
        // Bracket collapsed: keep the best decrease found, if any.
        if (lo.alpha > 0.0 && lo.finite && lo.phi < origin_.phi) {
            return lo;
        }
        return std::nullopt;
    }

    // One cubic refinement through the origin and the accepted point; exact
    // on quadratics, which keeps conjugacy for locally quadratic objectives.
    std::optional<Probe> polish(std::optional<Probe> accepted) {
        if (!accepted || std::abs(accepted->dphi) <= 1e-12 * std::abs(origin_.dphi)) {
            return accepted;
        }
        const auto cm = cubic_minimizer(origin_, *accepted);
        if (!cm || !(*cm > 0.0) || std::abs(*cm - accepted->alpha) <= 1e-12 * accepted->alpha) {
            return accepted;
        }
        Probe refined = line_(*cm);
        if (refined.finite && sufficient(refined) && curvature(refined) && refined.phi <= accepted->phi) {
            return refined;
        }
        return accepted;
    }

    LineFunction& line_;
    const LineSearchConfig& config_;
    const Probe& origin_;
};

// Approximate-Wolfe search for the rounding floor, where differences in phi
// stop being informative but slopes still are: accept a step whose slope
// satisfies strong curvature and whose value is within eps of the origin.
class SlopeSearch {
public:
    SlopeSearch(LineFunction& line, const LineSearchConfig& config, const Probe& origin)
        : line_(line), config_(config), origin_(origin), band_(origin.phi + kApproxEps * std::abs(origin.phi)) {}

    std::optional<Probe> run(double alpha_init) {
        Probe lo = origin_;
        std::optional<Probe> hi;
        double alpha = alpha_init;
        for (int i = 0; i < 2 * config_.max_evals; ++i) {
            Probe cur = line_(alpha);
            const bool admissible = cur.finite && cur.phi <= band_;
            if (admissible && std::abs(cur.dphi) <= -config_.c2 * origin_.dphi) {
                return cur;
            }
            if (admissible && cur.dphi < 0.0) {
                lo = std::move(cur);
            } else {
                hi = std::move(cur);
            }
            if (!hi) {
                alpha = lo.alpha * 10.0;
                continue;
            }
            const double a = lo.alpha;
            const double b = hi->alpha;
            if (b - a <= 1e-14 * std::max(1.0, b)) {
                break;
            }
            alpha = 0.5 * (a + b);
            if (hi->finite && hi->phi <= band_ && hi->dphi > lo.dphi) {
                const double secant = a - lo.dphi * (b - a) / (hi->dphi - lo.dphi);
                alpha = std::clamp(secant, a + 0.05 * (b - a), b - 0.05 * (b - a));
            }
        }
        return std::nullopt;
    }

    static constexpr double kApproxEps = 1e-12;

private:
    LineFunction& line_;
    const LineSearchConfig& config_;
    const Probe& origin_;
    double band_;
};

}  // namespace

const char* to_string(StopReason reason) {
    switch (reason) {
        case StopReason::gradient_tolerance:
            return "gradient_tolerance";
        case StopReason::max_iterations:
            return "max_iterations";
        case StopReason::non_finite:
            return "non_finite";
        case StopReason::line_search_failure:
            return "line_search_failure";
    }
    return "unknown";
}

void OptimizerConfig::validate() const {
    if (!(line_search.c1 > 0.0 && line_search.c1 < line_search.c2 && line_search.c2 < 1.0)) {
        throw std::invalid_argument("OptimizerConfig: line search constants must satisfy 0 < c1 < c2 < 1");
    }
    if (max_iters < 1) {
        throw std::invalid_argument("OptimizerConfig: max_iters must be >= 1");
    }
    if (n_starts < 1) {
        throw std::invalid_argument("OptimizerConfig: n_starts must be >= 1");
    }
    if (!(grad_tol >= 0.0) || !(gradient_scale > 0.0)) {
        throw std::invalid_argument("OptimizerConfig: grad_tol must be >= 0 and gradient_scale > 0");
    }
    if (line_search.max_evals < 1) {
        throw std::invalid_argument("OptimizerConfig: line search needs at least one evaluation");
    }
}

OptimResult maximize(const ObjectiveFn& objective, const Eigen::VectorXd& x0, const OptimizerConfig& config) {
    config.validate();
    OptimResult result;
    result.x_best = x0;
    result.f_best = -kInf;

    const auto n = x0.size();
    const int restart_every = config.restart_every < 0 ? static_cast<int>(10 * std::max<Eigen::Index>(n, 1))
                                                       : config.restart_every;

    Eigen::VectorXd x = x0;
    Eigen::VectorXd zero_dir = Eigen::VectorXd::Zero(n);
    Probe here = LineFunction(objective, x, zero_dir)(0.0);
    if (!here.finite) {
        result.reason = StopReason::non_finite;
        result.message = "objective or gradient not finite at the start point";
        result.per_start.push_back({-kInf, false, true, 0, result.reason, result.message});
        return result;
    }
    result.f_best = -here.phi;
    result.trace.push_back(result.f_best);

    Eigen::VectorXd dir = -here.grad;
    double prev_alpha = 0.0;
    double prev_dphi = 0.0;
    int iter = 0;
    bool steepest = true;
    // once values stop resolving progress, only slopes are used
    bool approximate = false;
    constexpr int kMaxStalled = 20;
    int stalled = 0;
    double floor_grad = kInf;
    for (;;) {
        if (here.grad.lpNorm<Eigen::Infinity>() * config.gradient_scale <= config.grad_tol) {
            result.converged = true;
            result.reason = StopReason::gradient_tolerance;
            break;
        }
        if (iter >= config.max_iters) {
            result.reason = StopReason::max_iterations;
            break;
        }
        double dphi0 = here.grad.dot(dir);
        if (!(dphi0 < 0.0)) {
            dir = -here.grad;
            dphi0 = -here.grad.squaredNorm();
            steepest = true;
        }
        double alpha0 = iter == 0 || prev_alpha == 0.0 ? 1.0 / std::max(1.0, dir.norm()) : prev_alpha * prev_dphi / dphi0;
        if (!(alpha0 > 0.0) || !std::isfinite(alpha0)) {
            alpha0 = 1.0 / std::max(1.0, dir.norm());
        }

        here.alpha = 0.0;
        here.dphi = dphi0;
        std::optional<Probe> step;
        if (!approximate) {
            LineFunction line(objective, x, dir);
            step = StrongWolfeSearch(line, config.line_search, here).run(alpha0);
            if (!step && !steepest) {
                dir = -here.grad;
                dphi0 = -here.grad.squaredNorm();
                here.dphi = dphi0;
                steepest = true;
                LineFunction fallback(objective, x, dir);
                step = StrongWolfeSearch(fallback, config.line_search, here).run(1.0 / std::max(1.0, dir.norm()));
            }
            approximate = !step;
        }
        if (approximate && !step) {
            LineFunction line(objective, x, dir);
            step = SlopeSearch(line, config.line_search, here).run(alpha0);
            if (!step && !steepest) {
                dir = -here.grad;
                dphi0 = -here.grad.squaredNorm();
                here.dphi = dphi0;
                steepest = true;
                LineFunction fallback(objective, x, dir);
                step = SlopeSearch(fallback, config.line_search, here).run(1.0 / std::max(1.0, dir.norm()));
            }
            if (step) {
                const double g = step->grad.lpNorm<Eigen::Infinity>();
                stalled = g < floor_grad ? 0 : stalled + 1;
                floor_grad = std::min(floor_grad, g);
                if (stalled >= kMaxStalled) {
                    step.reset();
                }
            }
        }
        if (!step) {
            result.reason = StopReason::line_search_failure;
            std::ostringstream msg;
            msg << "line search failed at iteration " << iter << " (|grad|_inf = "
                << here.grad.lpNorm<Eigen::Infinity>() << ")";
            result.message = msg.str();
            break;
        }

        x += step->alpha * dir;
        const Eigen::VectorXd grad_old = here.grad;
        prev_alpha = step->alpha;
        prev_dphi = dphi0;
        here.phi = step->phi;
        here.grad = std::move(step->grad);
        ++iter;
        result.trace.push_back(-here.phi);

        double beta = std::max(0.0, here.grad.dot(here.grad - grad_old) / grad_old.squaredNorm());
        if (!std::isfinite(beta) || (restart_every > 0 && iter % restart_every == 0)) {
            beta = 0.0;
        }
        dir = -here.grad + beta * dir;
        steepest = beta == 0.0;
    }

    result.x_best = x;
    result.f_best = -here.phi;
    result.iterations = iter;
    // a stalled line search still leaves a finite accepted point; only a start without one has failed
    const bool failed = !std::isfinite(result.f_best);
    result.per_start.push_back({result.f_best, result.converged, failed, iter, result.reason, result.message});
    return result;
}

OptimResult multi_start(const ObjectiveFn& objective, const InitSampler& init, const OptimizerConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::vector<Eigen::VectorXd> starts;
    starts.reserve(static_cast<std::size_t>(config.n_starts));
    for (int s = 0; s < config.n_starts; ++s) {
        starts.push_back(init(rng));
    }

    std::vector<OptimResult> runs(starts.size());
    parallel_for(starts.size(), config.threads, [&](std::size_t s) { runs[s] = maximize(objective, starts[s], config); });

    std::vector<StartSummary> summaries;
    summaries.reserve(runs.size());
    int best = -1;
    for (std::size_t s = 0; s < runs.size(); ++s) {
        summaries.push_back(runs[s].per_start.front());
        const auto& summary = summaries.back();
        if (summary.failed || !std::isfinite(summary.value)) {
            continue;
        }
        if (best < 0 || summary.value > runs[static_cast<std::size_t>(best)].f_best) {
            best = static_cast<int>(s);
        }
    }
    if (best < 0) {
        std::ostringstream msg;
        msg << "all " << runs.size() << " optimizer starts failed:";
        for (std::size_t s = 0; s < summaries.size(); ++s) {
            msg << " [" << s << "] " << to_string(summaries[s].reason);
            if (!summaries[s].message.empty()) {
                msg << " (" << summaries[s].message << ")";
            }
        }
        throw OptimizationError(msg.str(), std::move(summaries));
    }
    OptimResult result = std::move(runs[static_cast<std::size_t>(best)]);
    result.per_start = std::move(summaries);
    result.best_start = best;
    return result;
}

}  // namespace nnmix
