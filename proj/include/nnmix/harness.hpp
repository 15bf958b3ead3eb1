#ifndef NNMIX_HARNESS_HPP
#define NNMIX_HARNESS_HPP

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnmix/cluster.hpp"
#include "nnmix/em.hpp"
#include "nnmix/estimate.hpp"
#include "nnmix/optim.hpp"

namespace nnmix {

/// n draws from 0.5 N(0,1) + 0.5 N(4,1): a fair coin picks the component, then a Gaussian draw.
std::vector<double> generate_mixture_data(std::size_t n, std::mt19937_64& rng);

/// True (theta, c) of the simulation target, components in ascending mean order.
MixtureModel simulation_truth();

enum class NoiseScheme { single_moment_matched, two_true_components };
const char* to_string(NoiseScheme scheme);
NoiseScheme parse_noise_scheme(const std::string& name);

/// Method id used in result rows: "nce", "mnce" or "mle".
const char* method_id(NoiseScheme scheme);

/// Where the single-noise Gaussian gets its mean and variance.
enum class MomentSource { population, sample };
const char* to_string(MomentSource source);
MomentSource parse_moment_source(const std::string& name);

struct SimConfig {
    std::vector<int> sample_sizes;
    int replicates = 20;
    std::vector<NoiseScheme> schemes{NoiseScheme::single_moment_matched, NoiseScheme::two_true_components};
    bool include_mle = true;
    MomentSource moments = MomentSource::population;
    std::uint64_t seed = 0;
    OptimizerConfig optimizer = default_optimizer();
    EmConfig em;
    /// Workers over (N, replicate) tasks; each fit itself is single-threaded.
    int threads = 1;

    static OptimizerConfig default_optimizer();
    void validate() const;
};

struct SimResultRow {
    int n = 0;
    std::string method;
    int replicate = 0;  // zero-based
    double err_theta = 0.0;
    double err_c = 0.0;
    bool converged = false;
};

/// Rows ordered by N, then replicate, then method (nce, mnce, mle).
/// Results do not depend on `threads`.
std::vector<SimResultRow> run_simulation(const SimConfig& config);

struct MedianRow {
    int n = 0;
    std::string method;
    double med_theta = 0.0;  // NaN when no converged row exists
    double med_c = 0.0;
    int used = 0;
    int excluded = 0;
};

/// Median over converged replicates per (N, method), ordered by N then first appearance of the method.
std::vector<MedianRow> summarize_medians(const std::vector<SimResultRow>& rows);

struct SlopeRow {
    std::string method;
    double slope_theta = 0.0;
    double slope_c = 0.0;
    int points = 0;
};

/// Least-squares slope of log2(median) against log2(N) per method, over
/// cells with N in [n_min, n_max] and a finite positive median.
std::vector<SlopeRow> consistency_slopes(const std::vector<MedianRow>& medians, int n_min = 0,
                                         int n_max = 1 << 30);

double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y);

/// 17 significant digits; NaN cells print as NA.
void write_rows_csv(const std::string& path, const std::vector<SimResultRow>& rows);
void write_medians_csv(const std::string& path, const std::vector<MedianRow>& medians);

/// Synthetic deep-transfer generator. With base measure h = N(0, I) and
/// linear features, noise class l with weight row w_l is N(w_l, I) and
/// target cluster k with mean mu_k is N(mu_k, I). The pretraining model is
/// correctly specified when all w_l have equal norm and all classes share
/// one count.
struct TransferSpec {
    Eigen::MatrixXd noise_weights;  // L x d
    Eigen::MatrixXd cluster_means;  // K x d
    Eigen::VectorXd cluster_weights;
    int n_data = 2000;
    int noise_per_class = 2000;
    int n_starts = 10;
    std::uint64_t seed = 0;
    OptimizerConfig optimizer;
    bool run_em = true;

    /// K = 2 clusters, L = 3 classes in d = 5 as used by the acceptance check.
    static TransferSpec standard();
    void validate() const;
};

struct TransferData {
    Eigen::MatrixXd data;  // N x d
    std::vector<int> labels;
    std::vector<Eigen::MatrixXd> noise;
    Eigen::MatrixXd weights;
};

TransferData generate_transfer_data(const TransferSpec& spec);

/// Exact (theta, c) of the target mixture under the generator.
MixtureModel transfer_truth(const TransferSpec& spec);

struct TransferReport {
    EstimationResult fit;
    ClusterReport cluster;
    std::optional<ClusterReport> em_cluster;
    std::optional<EmResult> em_fit;
};

/// Generates, fits deep_mnce with multi-start and scores against the generating labels.
TransferReport run_transfer_experiment(const TransferSpec& spec);

}  // namespace nnmix

#endif
