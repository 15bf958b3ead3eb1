#include "nnmix/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace nnmix {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) {
        throw std::domain_error("log_sum_exp: empty input");
    }
    double max_value = kNegInf;
    for (double v : values) {
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
            throw std::domain_error("log_sum_exp: entries must lie in [-inf, +inf)");
        }
        max_value = std::max(max_value, v);
    }
    if (max_value == kNegInf) {
        throw std::domain_error("log_sum_exp: all entries are -inf");
    }
    double sum = 0.0;
    for (double v : values) {
        sum += std::exp(v - max_value);
    }
    return max_value + std::log(sum);
}

Eigen::VectorXd row_log_sum_exp(const Eigen::MatrixXd& values) {
    Eigen::VectorXd out(values.rows());
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        const double max_value = values.cols() > 0 ? values.row(i).maxCoeff() : kNegInf;
        if (max_value == kNegInf) {
            out(i) = kNegInf;
            continue;
        }
        out(i) = max_value + std::log((values.row(i).array() - max_value).exp().sum());
    }
    return out;
}

double softplus(double x) {
    if (x > 0.0) {
        return x + std::log1p(std::exp(-x));
    }
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double component_log_density(const Component& comp, const Eigen::Ref<const Eigen::VectorXd>& feats) {
    if (comp.theta.size() != feats.size()) {
        throw std::invalid_argument("component_log_density: feature dimension " + std::to_string(feats.size()) +
                                    " does not match component dimension " + std::to_string(comp.theta.size()));
    }
    return comp.theta.dot(feats) + comp.c;
}

MixtureModel::MixtureModel(const std::vector<Component>& components, std::string feature_map)
    : feature_map_(std::move(feature_map)) {
    if (components.empty()) {
        throw std::invalid_argument("MixtureModel: at least one component is required");
    }
    const auto dim = components.front().theta.size();
    theta_.resize(static_cast<Eigen::Index>(components.size()), dim);
    c_.resize(static_cast<Eigen::Index>(components.size()));
    for (std::size_t k = 0; k < components.size(); ++k) {
        if (components[k].theta.size() != dim) {
            throw std::invalid_argument("MixtureModel: components have different dimensions");
        }
        theta_.row(static_cast<Eigen::Index>(k)) = components[k].theta.transpose();
        c_(static_cast<Eigen::Index>(k)) = components[k].c;
    }
    validate();
}

MixtureModel::MixtureModel(Eigen::MatrixXd theta, Eigen::VectorXd c, std::string feature_map)
    : theta_(std::move(theta)), c_(std::move(c)), feature_map_(std::move(feature_map)) {
    validate();
}

void MixtureModel::validate() const {
    if (c_.size() < 1) {
        throw std::invalid_argument("MixtureModel: at least one component is required");
    }
    if (theta_.rows() != c_.size()) {
        throw std::invalid_argument("MixtureModel: theta has " + std::to_string(theta_.rows()) + " rows but c has " +
                                    std::to_string(c_.size()) + " entries");
    }
    if (!theta_.allFinite() || !c_.allFinite()) {
        throw std::invalid_argument("MixtureModel: parameters must be finite");
    }
}

MixtureModel MixtureModel::unpack(const Eigen::Ref<const Eigen::VectorXd>& flat, int num_components, int dim,
                                  std::string feature_map) {
    if (num_components < 1 || dim < 0 || flat.size() != static_cast<Eigen::Index>(num_components) * (dim + 1)) {
        throw std::invalid_argument("MixtureModel::unpack: parameter vector has wrong length");
    }
    Eigen::MatrixXd theta(num_components, dim);
    for (int k = 0; k < num_components; ++k) {
        theta.row(k) = flat.segment(static_cast<Eigen::Index>(k) * dim, dim).transpose();
    }
    Eigen::VectorXd c = flat.tail(num_components);
    return MixtureModel(std::move(theta), std::move(c), std::move(feature_map));
}

Eigen::VectorXd MixtureModel::pack() const {
    Eigen::VectorXd flat(num_params());
    const int d = dim();
    for (int k = 0; k < num_components(); ++k) {
        flat.segment(static_cast<Eigen::Index>(k) * d, d) = theta_.row(k).transpose();
    }
    flat.tail(num_components()) = c_;
    return flat;
}

Component MixtureModel::component(int k) const {
    if (k < 0 || k >= num_components()) {
        throw std::out_of_range("MixtureModel::component: index out of range");
    }
    return Component{theta_.row(k).transpose(), c_(k)};
}

Eigen::MatrixXd MixtureModel::component_log_densities(const Eigen::MatrixXd& feats) const {
    if (feats.cols() != dim()) {
        throw std::invalid_argument("MixtureModel: feature dimension " + std::to_string(feats.cols()) +
                                    " does not match model dimension " + std::to_string(dim()));
    }
    Eigen::MatrixXd logits = feats * theta_.transpose();
    logits.rowwise() += c_.transpose();
    return logits;
}

double MixtureModel::log_density(const Eigen::Ref<const Eigen::VectorXd>& feats) const {
    if (feats.size() != dim()) {
        throw std::invalid_argument("MixtureModel: feature dimension " + std::to_string(feats.size()) +
                                    " does not match model dimension " + std::to_string(dim()));
    }
    Eigen::VectorXd logits = theta_ * feats + c_;
    return log_sum_exp(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
}

Eigen::VectorXd MixtureModel::log_densities(const Eigen::MatrixXd& feats) const {
    return row_log_sum_exp(component_log_densities(feats));
}

MixtureModel MixtureModel::shifted(double delta) const {
    return MixtureModel(theta_, (c_.array() + delta).matrix(), feature_map_);
}

MixtureModel MixtureModel::permuted(std::span<const int> order) const {
    if (order.size() != static_cast<std::size_t>(num_components())) {
        throw std::invalid_argument("MixtureModel::permuted: order has wrong length");
    }
    std::vector<bool> seen(order.size(), false);
    Eigen::MatrixXd theta(theta_.rows(), theta_.cols());
    Eigen::VectorXd c(c_.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
        const int k = order[j];
        if (k < 0 || k >= num_components() || seen[static_cast<std::size_t>(k)]) {
            throw std::invalid_argument("MixtureModel::permuted: order is not a permutation");
        }
        seen[static_cast<std::size_t>(k)] = true;
        theta.row(static_cast<Eigen::Index>(j)) = theta_.row(k);
        c(static_cast<Eigen::Index>(j)) = c_(k);
    }
    return MixtureModel(std::move(theta), std::move(c), feature_map_);
}

double mixture_log_density(const MixtureModel& model, const Eigen::Ref<const Eigen::VectorXd>& feats) {
    return model.log_density(feats);
}

Component gaussian_natural_params(const GaussianSpec& spec) {
    if (!(spec.sigma2 > 0.0) || !std::isfinite(spec.sigma2)) {
        throw std::invalid_argument("gaussian_natural_params: sigma2 must be positive");
    }
    if (!(spec.pi > 0.0 && spec.pi <= 1.0)) {
        throw std::invalid_argument("gaussian_natural_params: pi must lie in (0, 1]");
    }
    if (!std::isfinite(spec.mu)) {
        throw std::invalid_argument("gaussian_natural_params: mu must be finite");
    }
    const double theta1 = -0.5 / spec.sigma2;
    const double theta2 = spec.mu / spec.sigma2;
    // log Z = 0.5 log(pi / -theta1) + theta2^2 / (-4 theta1)
    const double log_z = 0.5 * std::log(std::numbers::pi / -theta1) + theta2 * theta2 / (-4.0 * theta1);
    Component comp;
    comp.theta = Eigen::Vector2d(theta1, theta2);
    comp.c = std::log(spec.pi) - log_z;
    return comp;
}

GaussianSpec gaussian_moments(const Component& comp) {
    if (comp.theta.size() != 2) {
        throw std::invalid_argument("gaussian_moments: expected a 2-parameter component");
    }
    const double theta1 = comp.theta(0);
    if (!(theta1 < 0.0)) {
        throw std::domain_error("gaussian_moments: theta1 must be negative for an integrable component");
    }
    GaussianSpec spec;
    spec.sigma2 = -0.5 / theta1;
    spec.mu = -comp.theta(1) / (2.0 * theta1);
    const double log_z = 0.5 * std::log(std::numbers::pi / -theta1) + comp.theta(1) * comp.theta(1) / (-4.0 * theta1);
    spec.pi = std::exp(comp.c + log_z);
    return spec;
}

Eigen::Vector2d quadratic_features(double x) { return {x * x, x}; }

Eigen::MatrixXd quadratic_features(std::span<const double> xs) {
    Eigen::MatrixXd feats(static_cast<Eigen::Index>(xs.size()), 2);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        feats(static_cast<Eigen::Index>(i), 0) = xs[i] * xs[i];
        feats(static_cast<Eigen::Index>(i), 1) = xs[i];
    }
    return feats;
}

double gaussian_log_pdf(double x, double mu, double sigma2) {
    const double z = x - mu;
    return -0.5 * (std::log(2.0 * std::numbers::pi * sigma2) + z * z / sigma2);
}

MomentMatch moment_matched_gaussian(std::span<const double> samples) {
    if (samples.size() < 2) {
        throw std::invalid_argument("moment_matched_gaussian: need at least 2 samples");
    }
    const double n = static_cast<double>(samples.size());
    double mean = 0.0;
    for (double x : samples) {
        mean += x;
    }
    mean /= n;
    double var = 0.0;
    for (double x : samples) {
        var += (x - mean) * (x - mean);
    }
    var /= n;
    if (!(var > 0.0)) {
        throw std::invalid_argument("moment_matched_gaussian: samples have zero variance");
    }
    return {mean, var};
}

}  // namespace nnmix
