#ifndef NNMIX_NCE_HPP
#define NNMIX_NCE_HPP

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nnmix/model.hpp"

namespace nnmix {

/// Log-density evaluated at a raw sample (one row of a sample matrix).
using LogDensityFn = std::function<double(const Eigen::Ref<const Eigen::VectorXd>& point)>;

/// Sufficient-statistics map from a raw sample to its feature vector.
using FeatureFn = std::function<Eigen::VectorXd(const Eigen::Ref<const Eigen::VectorXd>& point)>;

/// Samples drawn from one noise distribution together with its log-density.
struct NoiseGroup {
    Eigen::MatrixXd samples;  // M_l x p raw samples
    LogDensityFn log_density;
};

struct NoiseSpec {
    std::vector<NoiseGroup> groups;

    std::vector<double> counts() const;
    double total_count() const;
};

/// log sum_l (M_l / M) n_l(y) from per-group counts and log-densities.
///
/// Returns -inf when every group density is zero at the point; callers
/// that need a usable noise value must check for it.
double mixture_noise_log_density(std::span<const double> counts, std::span<const double> log_densities);

double mixture_noise_log_density(const NoiseSpec& noise, const Eigen::Ref<const Eigen::VectorXd>& point);

/// Precomputed discrimination problem shared by every objective.
///
/// Each evaluation point carries its feature vector and two cached noise
/// quantities: the log noise mass log(sum_l M_l n_l(u)) that appears in the
/// denominator, and (for noise points) the log numerator log(M_l n_l(u)) of
/// the class it was drawn from. Both are parameter-free.
struct ContrastSet {
    Eigen::MatrixXd data_feats;        // N x d
    Eigen::ArrayXd data_log_mass;      // N
    Eigen::MatrixXd noise_feats;       // M x d, groups stacked in order
    Eigen::ArrayXd noise_log_numer;    // M
    Eigen::ArrayXd noise_log_mass;     // M

    int num_data() const { return static_cast<int>(data_feats.rows()); }
    int num_noise() const { return static_cast<int>(noise_feats.rows()); }
    int dim() const { return static_cast<int>(data_feats.cols()); }

    /// Objective value at a flat parameter vector; fills `grad` when non-null.
    ///
    /// Data terms are -softplus(B - log N - log p); noise terms are
    /// (A - B) - softplus(log N + log p - B), with A the log numerator and B
    /// the log noise mass.
    double evaluate(const Eigen::Ref<const Eigen::VectorXd>& params, int num_components,
                    Eigen::VectorXd* grad) const;
};

/// Data samples and L >= 1 noise groups in feature space, with the noise
/// log-densities evaluated once at every data and noise point.
class NceProblem {
public:
    /// `data_log_noise` is N x L; `noise_log_noise[l]` is M_l x L and holds
    /// every group's log-density at the samples of group l.
    NceProblem(Eigen::MatrixXd data_feats, Eigen::MatrixXd data_log_noise, std::vector<Eigen::MatrixXd> noise_feats,
               std::vector<Eigen::MatrixXd> noise_log_noise);

    /// Evaluates features and noise log-densities for raw data and noise samples.
    static NceProblem build(const Eigen::MatrixXd& data_samples, const NoiseSpec& noise, const FeatureFn& features);

    /// Single-group problem over the pooled noise samples with the
    /// count-weighted mixture density log(sum_l M_l/M n_l).
    NceProblem pooled() const;

    int num_data() const { return static_cast<int>(data_feats_.rows()); }
    int num_groups() const { return static_cast<int>(counts_.size()); }
    int dim() const { return static_cast<int>(data_feats_.cols()); }
    const std::vector<double>& counts() const { return counts_; }
    double total_noise() const;
    double nu() const { return total_noise() / num_data(); }

    const Eigen::MatrixXd& data_feats() const { return data_feats_; }
    const Eigen::MatrixXd& data_log_noise() const { return data_log_noise_; }
    const std::vector<Eigen::MatrixXd>& noise_feats() const { return noise_feats_; }
    const std::vector<Eigen::MatrixXd>& noise_log_noise() const { return noise_log_noise_; }
    const ContrastSet& contrast() const { return contrast_; }

private:
    Eigen::MatrixXd data_feats_;
    Eigen::MatrixXd data_log_noise_;
    std::vector<Eigen::MatrixXd> noise_feats_;
    std::vector<Eigen::MatrixXd> noise_log_noise_;
    std::vector<double> counts_;
    ContrastSet contrast_;
};

/// Single-noise objective; throws std::invalid_argument unless the problem has exactly one noise group.
double nce_objective(const NceProblem& problem, const MixtureModel& params);
Eigen::VectorXd nce_gradient(const NceProblem& problem, const MixtureModel& params);

/// Multi-noise objective over the L + 1 class discrimination.
double mnce_objective(const NceProblem& problem, const MixtureModel& params);
Eigen::VectorXd mnce_gradient(const NceProblem& problem, const MixtureModel& params);

/// Clustering inputs for the deep-transfer setting: features of the
/// unlabeled data, features of the pretraining data grouped by class, and
/// the pretrained last-layer weights (L x d). Class counts are the row
/// counts of the per-class feature matrices.
class DeepTransferProblem {
public:
    DeepTransferProblem(Eigen::MatrixXd data_feats, std::vector<Eigen::MatrixXd> noise_feats_by_class,
                        Eigen::MatrixXd weights);

    int num_data() const { return static_cast<int>(data_feats_.rows()); }
    int num_classes() const { return static_cast<int>(weights_.rows()); }
    int dim() const { return static_cast<int>(data_feats_.cols()); }
    const std::vector<double>& counts() const { return counts_; }

    const Eigen::MatrixXd& data_feats() const { return data_feats_; }
    const std::vector<Eigen::MatrixXd>& noise_feats_by_class() const { return noise_feats_; }
    const Eigen::MatrixXd& weights() const { return weights_; }
    const ContrastSet& contrast() const { return contrast_; }

private:
    Eigen::MatrixXd data_feats_;
    std::vector<Eigen::MatrixXd> noise_feats_;
    Eigen::MatrixXd weights_;
    std::vector<double> counts_;
    ContrastSet contrast_;
};

/// Deep-transfer objective. The noise mass is M_1 * sum_l exp(w_l . f) at
/// every point, with the single leading count M_1 for all classes.
double deep_mnce_objective(const DeepTransferProblem& problem, const Eigen::MatrixXd& theta, const Eigen::VectorXd& c);
Eigen::VectorXd deep_mnce_gradient(const DeepTransferProblem& problem, const Eigen::MatrixXd& theta,
                                   const Eigen::VectorXd& c);

}  // namespace nnmix

#endif
