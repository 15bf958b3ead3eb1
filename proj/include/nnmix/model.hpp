#ifndef NNMIX_MODEL_HPP
#define NNMIX_MODEL_HPP

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nnmix {

/// Numerically stable log(sum(exp(values))).
///
/// Throws std::domain_error when `values` is empty or every entry is -inf.
double log_sum_exp(std::span<const double> values);

/// Row-wise log-sum-exp of a matrix; rows that are all -inf yield -inf.
Eigen::VectorXd row_log_sum_exp(const Eigen::MatrixXd& values);

/// log(1 + exp(x)) without overflow.
double softplus(double x);

/// 1 / (1 + exp(-x)) without overflow.
double sigmoid(double x);

/// One non-normalized exponential-family component: log p = theta . f + c.
///
/// `c` absorbs both the mixture weight and the unknown log-normalizer.
struct Component {
    Eigen::VectorXd theta;
    double c = 0.0;
};

/// theta . feats + c. Throws std::invalid_argument on a dimension mismatch.
double component_log_density(const Component& comp, const Eigen::Ref<const Eigen::VectorXd>& feats);

/// Ordered collection of K components sharing a feature dimension d.
///
/// Parameters are stored as a K x d matrix of natural parameters and a
/// K-vector of log-offsets. Component order is insertion order. The flat
/// parameter layout used by the objectives and the optimizer is
/// [theta row 0, theta row 1, ..., theta row K-1, c_0, ..., c_{K-1}].
class MixtureModel {
public:
    MixtureModel(const std::vector<Component>& components, std::string feature_map = {});
    MixtureModel(Eigen::MatrixXd theta, Eigen::VectorXd c, std::string feature_map = {});

    static MixtureModel unpack(const Eigen::Ref<const Eigen::VectorXd>& flat, int num_components, int dim,
                               std::string feature_map = {});
    Eigen::VectorXd pack() const;

    int num_components() const { return static_cast<int>(c_.size()); }
    int dim() const { return static_cast<int>(theta_.cols()); }
    int num_params() const { return num_components() * (dim() + 1); }

    const Eigen::MatrixXd& theta() const { return theta_; }
    const Eigen::VectorXd& c() const { return c_; }
    const std::string& feature_map() const { return feature_map_; }
    Component component(int k) const;

    /// N x K matrix of per-component log-densities theta_k . f_t + c_k.
    Eigen::MatrixXd component_log_densities(const Eigen::MatrixXd& feats) const;

    /// log sum_k exp(theta_k . f + c_k) at one feature vector.
    double log_density(const Eigen::Ref<const Eigen::VectorXd>& feats) const;

    /// Mixture log-density at every row of `feats`.
    Eigen::VectorXd log_densities(const Eigen::MatrixXd& feats) const;

    /// Same model with every component's offset shifted by `delta`.
    MixtureModel shifted(double delta) const;

    /// Same model with components reordered: new component j is old component order[j].
    MixtureModel permuted(std::span<const int> order) const;

private:
    void validate() const;

    Eigen::MatrixXd theta_;
    Eigen::VectorXd c_;
    std::string feature_map_;
};

/// Free-function form of MixtureModel::log_density.
double mixture_log_density(const MixtureModel& model, const Eigen::Ref<const Eigen::VectorXd>& feats);

/// A 1-D Gaussian mixture component in moment form.
struct GaussianSpec {
    double mu = 0.0;
    double sigma2 = 1.0;
    double pi = 1.0;
};

/// Natural parameters of pi * N(mu, sigma2) under f(x) = (x^2, x).
///
/// theta = (-1/(2 sigma2), mu/sigma2) and c = log(pi) - log Z(theta).
Component gaussian_natural_params(const GaussianSpec& spec);

/// Inverse of gaussian_natural_params for the mean and variance.
/// Throws std::domain_error unless theta(0) < 0.
GaussianSpec gaussian_moments(const Component& comp);

/// Sufficient statistics (x^2, x) of the 1-D Gaussian family.
Eigen::Vector2d quadratic_features(double x);

/// Row-wise quadratic_features over a sample vector.
Eigen::MatrixXd quadratic_features(std::span<const double> xs);

/// Log-density of N(mu, sigma2) at x.
double gaussian_log_pdf(double x, double mu, double sigma2);

struct MomentMatch {
    double mean = 0.0;
    double variance = 0.0;
};

/// Sample mean and maximum-likelihood (divisor N) variance.
///
/// Throws std::invalid_argument for fewer than 2 samples or zero variance.
MomentMatch moment_matched_gaussian(std::span<const double> samples);

}  // namespace nnmix

#endif
