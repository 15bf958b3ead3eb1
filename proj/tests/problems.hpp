#ifndef NNMIX_TESTS_PROBLEMS_HPP
#define NNMIX_TESTS_PROBLEMS_HPP

// Seeded problem generators shared by the unit tests and the acceptance suite.

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "nnmix/model.hpp"
#include "nnmix/nce.hpp"

namespace testing_problems {

inline Eigen::VectorXd quad_features(const Eigen::Ref<const Eigen::VectorXd>& x) {
    return nnmix::quadratic_features(x(0));
}

inline nnmix::NoiseGroup gaussian_group(double mu, double sigma2, int m, std::mt19937_64& rng) {
    std::normal_distribution<double> z(mu, std::sqrt(sigma2));
    nnmix::NoiseGroup g;
    g.samples.resize(m, 1);
    for (int i = 0; i < m; ++i) {
        g.samples(i, 0) = z(rng);
    }
    g.log_density = [mu, sigma2](const Eigen::Ref<const Eigen::VectorXd>& x) {
        return nnmix::gaussian_log_pdf(x(0), mu, sigma2);
    };
    return g;
}

inline Eigen::MatrixXd mixture_samples(int n, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> z;
    Eigen::MatrixXd x(n, 1);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = (coin(rng) ? 4.0 : 0.0) + z(rng);
    }
    return x;
}

inline nnmix::MixtureModel simulation_truth_model() {
    return nnmix::MixtureModel(
        {nnmix::gaussian_natural_params({0.0, 1.0, 0.5}), nnmix::gaussian_natural_params({4.0, 1.0, 0.5})});
}

/// Simulation data; noise is N(2,5) with m samples, or N(0,1) and N(4,1) with m/2 each.
inline nnmix::NceProblem simulation_problem(int n, int m, bool two_noise, std::mt19937_64& rng) {
    const Eigen::MatrixXd data = mixture_samples(n, rng);
    nnmix::NoiseSpec noise;
    if (two_noise) {
        noise.groups.push_back(gaussian_group(0.0, 1.0, m / 2, rng));
        noise.groups.push_back(gaussian_group(4.0, 1.0, m - m / 2, rng));
    } else {
        noise.groups.push_back(gaussian_group(2.0, 5.0, m, rng));
    }
    return nnmix::NceProblem::build(data, noise, quad_features);
}

/// Data from the simulation mixture and L Gaussian noise groups with random
/// means and variances, M samples each, under quadratic features.
inline nnmix::NceProblem random_problem(int l, int n, int m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> mean(-1.0, 5.0);
    std::uniform_real_distribution<double> var(1.0, 6.0);
    const Eigen::MatrixXd data = mixture_samples(n, rng);
    nnmix::NoiseSpec noise;
    for (int g = 0; g < l; ++g) {
        noise.groups.push_back(gaussian_group(mean(rng), var(rng), m, rng));
    }
    return nnmix::NceProblem::build(data, noise, quad_features);
}

/// Flat (theta, c): theta entries N(0, theta_scale^2), c uniform on [-6, 0].
/// For d = 2 the x^2 coefficient is made negative and shrunk.
inline Eigen::VectorXd random_params(int k, int d, std::mt19937_64& rng, double theta_scale) {
    std::normal_distribution<double> z(0.0, theta_scale);
    std::uniform_real_distribution<double> c(-6.0, 0.0);
    Eigen::VectorXd x(k * (d + 1));
    for (int i = 0; i < k * d; ++i) {
        x(i) = z(rng);
        if (d == 2 && i % 2 == 0) {
            x(i) = -std::abs(x(i)) * 0.2;
        }
    }
    for (int i = 0; i < k; ++i) {
        x(k * d + i) = c(rng);
    }
    return x;
}

struct DeepInstance {
    Eigen::MatrixXd data;
    std::vector<Eigen::MatrixXd> noise;
    Eigen::MatrixXd weights;
};

/// Gaussian features: data around K random centres, class l around w_l.
inline DeepInstance random_deep_instance(int k, int l, int d, int n, const std::vector<int>& counts,
                                         std::mt19937_64& rng) {
    std::normal_distribution<double> z;
    DeepInstance inst;
    inst.weights.resize(l, d);
    for (Eigen::Index i = 0; i < inst.weights.size(); ++i) {
        inst.weights(i) = z(rng);
    }
    Eigen::MatrixXd centres(k, d);
    for (Eigen::Index i = 0; i < centres.size(); ++i) {
        centres(i) = 1.5 * z(rng);
    }
    std::uniform_int_distribution<int> pick(0, k - 1);
    inst.data.resize(n, d);
    for (int t = 0; t < n; ++t) {
        const int j = pick(rng);
        for (int i = 0; i < d; ++i) {
            inst.data(t, i) = centres(j, i) + z(rng);
        }
    }
    for (int g = 0; g < l; ++g) {
        Eigen::MatrixXd block(counts[static_cast<std::size_t>(g)], d);
        for (Eigen::Index t = 0; t < block.rows(); ++t) {
            for (int i = 0; i < d; ++i) {
                block(t, i) = inst.weights(g, i) + z(rng);
            }
        }
        inst.noise.push_back(block);
    }
    return inst;
}

}  // namespace testing_problems

#endif
