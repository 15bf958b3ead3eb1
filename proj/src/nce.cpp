#include "nnmix/nce.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace nnmix {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::VectorXd log_counts(const std::vector<double>& counts) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(counts.size()));
    for (std::size_t l = 0; l < counts.size(); ++l) {
        out(static_cast<Eigen::Index>(l)) = std::log(counts[l]);
    }
    return out;
}

double row_lse(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    const double m = row.maxCoeff();
    if (m == kNegInf) {
        return kNegInf;
    }
    return m + std::log((row.array() - m).exp().sum());
}

enum class PointKind { data, noise };

// Adds one chunk of evaluation points (rows of feats) to the objective
// and, when requested, to the gradient. With u = log N + log p - B the data
// summand is -softplus(-u) with slope 1 - sigmoid(u); the noise summand is
// (A - B) - softplus(u) with slope -sigmoid(u).
double accumulate_chunk(PointKind kind, const Eigen::Ref<const Eigen::MatrixXd>& feats, const Eigen::MatrixXd& theta,
                        const Eigen::VectorXd& c, double log_n, const Eigen::Ref<const Eigen::ArrayXd>& log_mass,
                        const Eigen::Ref<const Eigen::ArrayXd>& log_numer, Eigen::MatrixXd* grad_theta,
                        Eigen::VectorXd* grad_c) {
    const Eigen::Index num_k = theta.rows();
    Eigen::MatrixXd logits = feats * theta.transpose();  // n x K
    logits.rowwise() += c.transpose();

    Eigen::ArrayXd max_logit = logits.col(0).array();
    for (Eigen::Index k = 1; k < num_k; ++k) {
        max_logit = max_logit.max(logits.col(k).array());
    }
    Eigen::ArrayXXd shifted_exp(logits.rows(), num_k);
    for (Eigen::Index k = 0; k < num_k; ++k) {
        shifted_exp.col(k) = (logits.col(k).array() - max_logit).exp();
    }
    const Eigen::ArrayXd sum_exp = shifted_exp.rowwise().sum();
    const Eigen::ArrayXd u = log_n + max_logit + sum_exp.log() - log_mass;

    const Eigen::ArrayXd tail = (-u.abs()).exp();  // exp(-|u|)
    const Eigen::ArrayXd one_plus = 1.0 + tail;
    // log1p via the rounded sum: log(1+t) * t / ((1+t) - 1) keeps vectorized log at full accuracy
    const Eigen::ArrayXd log1p_tail =
        (one_plus == 1.0).select(tail, one_plus.log() * tail / (one_plus - 1.0));
    const Eigen::ArrayXd sig = (u >= 0.0).select(one_plus.inverse(), tail / one_plus);

    double total = 0.0;
    Eigen::ArrayXd slope;
    if (kind == PointKind::data) {
        total = -((-u).max(0.0) + log1p_tail).sum();
        slope = 1.0 - sig;
    } else {
        total = ((log_numer - log_mass) - (u.max(0.0) + log1p_tail)).sum();
        slope = -sig;
    }
    if (grad_theta != nullptr) {
        // d log p / d logit_k is the within-mixture responsibility.
        const Eigen::ArrayXd weight = slope / sum_exp;
        for (Eigen::Index k = 0; k < num_k; ++k) {
            shifted_exp.col(k) *= weight;
        }
        grad_theta->noalias() += shifted_exp.matrix().transpose() * feats;
        *grad_c += shifted_exp.colwise().sum().transpose().matrix();
    }
    return total;
}

// Adds one block of evaluation points (rows of feats) to the objective
// and, when requested, to the gradient. With u = log N + log p - B the data
// summand is -softplus(-u) with slope 1 - sigmoid(u); the noise summand is
// (A - B) - softplus(u) with slope -sigmoid(u). Points are visited in fixed
// chunks so the summation order depends only on the problem.
double accumulate_block(PointKind kind, const Eigen::MatrixXd& feats, const Eigen::MatrixXd& theta,
                        const Eigen::VectorXd& c, double log_n, const Eigen::ArrayXd& log_mass,
                        const Eigen::ArrayXd& log_numer, Eigen::MatrixXd* grad_theta, Eigen::VectorXd* grad_c) {
    constexpr Eigen::Index kChunk = 1024;
    const Eigen::Index n = feats.rows();
    double total = 0.0;
    for (Eigen::Index start = 0; start < n; start += kChunk) {
        const Eigen::Index len = std::min(kChunk, n - start);
        const auto numer = kind == PointKind::data ? log_mass.segment(start, len) : log_numer.segment(start, len);
        total += accumulate_chunk(kind, feats.middleRows(start, len), theta, c, log_n, log_mass.segment(start, len),
                                  numer, grad_theta, grad_c);
    }
    return total;
}

}  // namespace

std::vector<double> NoiseSpec::counts() const {
    std::vector<double> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        out.push_back(static_cast<double>(g.samples.rows()));
    }
    return out;
}

double NoiseSpec::total_count() const {
    const auto c = counts();
    return std::accumulate(c.begin(), c.end(), 0.0);
}

double mixture_noise_log_density(std::span<const double> counts, std::span<const double> log_densities) {
    if (counts.empty() || counts.size() != log_densities.size()) {
        throw std::invalid_argument("mixture_noise_log_density: counts and densities must be nonempty and aligned");
    }
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    std::vector<double> terms(counts.size());
    for (std::size_t l = 0; l < counts.size(); ++l) {
        if (!(counts[l] > 0.0)) {
            throw std::invalid_argument("mixture_noise_log_density: counts must be positive");
        }
        terms[l] = std::log(counts[l] / total) + log_densities[l];
    }
    double max_value = kNegInf;
    for (double v : terms) {
        max_value = std::max(max_value, v);
    }
    if (max_value == kNegInf) {
        return kNegInf;
    }
    return log_sum_exp(terms);
}

double mixture_noise_log_density(const NoiseSpec& noise, const Eigen::Ref<const Eigen::VectorXd>& point) {
    if (noise.groups.empty()) {
        throw std::invalid_argument("mixture_noise_log_density: no noise groups");
    }
    const auto counts = noise.counts();
    std::vector<double> log_dens;
    log_dens.reserve(noise.groups.size());
    for (const auto& g : noise.groups) {
        log_dens.push_back(g.log_density(point));
    }
    return mixture_noise_log_density(counts, log_dens);
}

double ContrastSet::evaluate(const Eigen::Ref<const Eigen::VectorXd>& params, int num_components,
                             Eigen::VectorXd* grad) const {
    const int d = dim();
    if (num_components < 1 || params.size() != static_cast<Eigen::Index>(num_components) * (d + 1)) {
        throw std::invalid_argument("objective: parameter vector has length " + std::to_string(params.size()) +
                                    ", expected " + std::to_string(num_components * (d + 1)));
    }
    if (!params.allFinite()) {
        throw std::invalid_argument("objective: parameters must be finite");
    }
    Eigen::MatrixXd theta(num_components, d);
    for (int k = 0; k < num_components; ++k) {
        theta.row(k) = params.segment(static_cast<Eigen::Index>(k) * d, d).transpose();
    }
    const Eigen::VectorXd c = params.tail(num_components);
    const double log_n = std::log(static_cast<double>(num_data()));

    Eigen::MatrixXd grad_theta;
    Eigen::VectorXd grad_c;
    if (grad != nullptr) {
        grad_theta = Eigen::MatrixXd::Zero(num_components, d);
        grad_c = Eigen::VectorXd::Zero(num_components);
    }
    Eigen::MatrixXd* gt = grad != nullptr ? &grad_theta : nullptr;
    Eigen::VectorXd* gc = grad != nullptr ? &grad_c : nullptr;

    double total = accumulate_block(PointKind::data, data_feats, theta, c, log_n, data_log_mass, data_log_mass, gt, gc);
    total += accumulate_block(PointKind::noise, noise_feats, theta, c, log_n, noise_log_mass, noise_log_numer, gt,
                              gc);

    if (grad != nullptr) {
        grad->resize(params.size());
        for (int k = 0; k < num_components; ++k) {
            grad->segment(static_cast<Eigen::Index>(k) * d, d) = grad_theta.row(k).transpose();
        }
        grad->tail(num_components) = grad_c;
    }
    return total;
}

NceProblem::NceProblem(Eigen::MatrixXd data_feats, Eigen::MatrixXd data_log_noise,
                       std::vector<Eigen::MatrixXd> noise_feats, std::vector<Eigen::MatrixXd> noise_log_noise)
    : data_feats_(std::move(data_feats)),
      data_log_noise_(std::move(data_log_noise)),
      noise_feats_(std::move(noise_feats)),
      noise_log_noise_(std::move(noise_log_noise)) {
    const Eigen::Index n = data_feats_.rows();
    const Eigen::Index d = data_feats_.cols();
    const auto num_groups = static_cast<Eigen::Index>(noise_feats_.size());
    if (n < 1) {
        throw std::invalid_argument("NceProblem: at least one data sample is required");
    }
    if (num_groups < 1) {
        throw std::invalid_argument("NceProblem: at least one noise group is required");
    }
    if (noise_log_noise_.size() != noise_feats_.size()) {
        throw std::invalid_argument("NceProblem: missing noise log-density evaluations");
    }
    if (data_log_noise_.rows() != n || data_log_noise_.cols() != num_groups) {
        throw std::invalid_argument("NceProblem: data noise log-densities must be N x L");
    }
    if (!data_feats_.allFinite() || !data_log_noise_.allFinite()) {
        throw std::invalid_argument("NceProblem: data features and noise log-densities must be finite");
    }
    for (Eigen::Index l = 0; l < num_groups; ++l) {
        const auto& f = noise_feats_[static_cast<std::size_t>(l)];
        const auto& ln = noise_log_noise_[static_cast<std::size_t>(l)];
        if (f.rows() < 1) {
            throw std::invalid_argument("NceProblem: noise group " + std::to_string(l) + " is empty");
        }
        if (f.cols() != d) {
            throw std::invalid_argument("NceProblem: noise group " + std::to_string(l) + " has dimension " +
                                        std::to_string(f.cols()) + ", data has " + std::to_string(d));
        }
        if (ln.rows() != f.rows() || ln.cols() != num_groups) {
            throw std::invalid_argument("NceProblem: noise group " + std::to_string(l) +
                                        " log-densities must be M_l x L");
        }
        if (!f.allFinite() || !ln.allFinite()) {
            throw std::invalid_argument("NceProblem: noise features and log-densities must be finite");
        }
        counts_.push_back(static_cast<double>(f.rows()));
    }

    const Eigen::VectorXd log_m = log_counts(counts_);
    contrast_.data_feats = data_feats_;
    contrast_.data_log_mass.resize(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        contrast_.data_log_mass(t) = row_lse(data_log_noise_.row(t) + log_m.transpose());
    }
    const auto total = static_cast<Eigen::Index>(total_noise());
    contrast_.noise_feats.resize(total, d);
    contrast_.noise_log_numer.resize(total);
    contrast_.noise_log_mass.resize(total);
    Eigen::Index offset = 0;
    for (Eigen::Index l = 0; l < num_groups; ++l) {
        const auto& f = noise_feats_[static_cast<std::size_t>(l)];
        const auto& ln = noise_log_noise_[static_cast<std::size_t>(l)];
        contrast_.noise_feats.middleRows(offset, f.rows()) = f;
        for (Eigen::Index t = 0; t < f.rows(); ++t) {
            contrast_.noise_log_numer(offset + t) = log_m(l) + ln(t, l);
            contrast_.noise_log_mass(offset + t) = row_lse(ln.row(t) + log_m.transpose());
        }
        offset += f.rows();
    }
}

NceProblem NceProblem::build(const Eigen::MatrixXd& data_samples, const NoiseSpec& noise, const FeatureFn& features) {
    if (noise.groups.empty()) {
        throw std::invalid_argument("NceProblem::build: at least one noise group is required");
    }
    const auto num_groups = static_cast<Eigen::Index>(noise.groups.size());
    auto featurize = [&](const Eigen::MatrixXd& samples, Eigen::MatrixXd& feats, Eigen::MatrixXd& log_noise) {
        for (Eigen::Index t = 0; t < samples.rows(); ++t) {
            const Eigen::VectorXd point = samples.row(t).transpose();
            const Eigen::VectorXd f = features(point);
            if (t == 0) {
                feats.resize(samples.rows(), f.size());
                log_noise.resize(samples.rows(), num_groups);
            } else if (f.size() != feats.cols()) {
                throw std::invalid_argument("NceProblem::build: feature map returned inconsistent dimensions");
            }
            feats.row(t) = f.transpose();
            for (Eigen::Index l = 0; l < num_groups; ++l) {
                log_noise(t, l) = noise.groups[static_cast<std::size_t>(l)].log_density(point);
            }
        }
    };
    Eigen::MatrixXd data_feats;
    Eigen::MatrixXd data_log_noise;
    featurize(data_samples, data_feats, data_log_noise);
    std::vector<Eigen::MatrixXd> noise_feats(noise.groups.size());
    std::vector<Eigen::MatrixXd> noise_log_noise(noise.groups.size());
    for (std::size_t l = 0; l < noise.groups.size(); ++l) {
        featurize(noise.groups[l].samples, noise_feats[l], noise_log_noise[l]);
    }
    return NceProblem(std::move(data_feats), std::move(data_log_noise), std::move(noise_feats),
                      std::move(noise_log_noise));
}

NceProblem NceProblem::pooled() const {
    const double total = total_noise();
    Eigen::VectorXd log_weights(num_groups());
    for (int l = 0; l < num_groups(); ++l) {
        log_weights(l) = std::log(counts_[static_cast<std::size_t>(l)] / total);
    }
    auto mix = [&](const Eigen::MatrixXd& log_noise) {
        Eigen::MatrixXd out(log_noise.rows(), 1);
        for (Eigen::Index t = 0; t < log_noise.rows(); ++t) {
            out(t, 0) = row_lse(log_noise.row(t) + log_weights.transpose());
        }
        return out;
    };
    Eigen::MatrixXd noise_feats(static_cast<Eigen::Index>(total), dim());
    Eigen::MatrixXd noise_log(static_cast<Eigen::Index>(total), 1);
    Eigen::Index offset = 0;
    for (int l = 0; l < num_groups(); ++l) {
        const auto& f = noise_feats_[static_cast<std::size_t>(l)];
        noise_feats.middleRows(offset, f.rows()) = f;
        noise_log.middleRows(offset, f.rows()) = mix(noise_log_noise_[static_cast<std::size_t>(l)]);
        offset += f.rows();
    }
    return NceProblem(data_feats_, mix(data_log_noise_), {std::move(noise_feats)}, {std::move(noise_log)});
}

double NceProblem::total_noise() const { return std::accumulate(counts_.begin(), counts_.end(), 0.0); }

namespace {

void check_model_dim(const NceProblem& problem, const MixtureModel& params) {
    if (params.dim() != problem.dim()) {
        throw std::invalid_argument("objective: model dimension " + std::to_string(params.dim()) +
                                    " does not match problem dimension " + std::to_string(problem.dim()));
    }
}

void require_single_group(const NceProblem& problem) {
    if (problem.num_groups() != 1) {
        throw std::invalid_argument("nce_objective: expected exactly one noise group, got " +
                                    std::to_string(problem.num_groups()));
    }
}

}  // namespace

double nce_objective(const NceProblem& problem, const MixtureModel& params) {
    require_single_group(problem);
    return mnce_objective(problem, params);
}

Eigen::VectorXd nce_gradient(const NceProblem& problem, const MixtureModel& params) {
    require_single_group(problem);
    return mnce_gradient(problem, params);
}

double mnce_objective(const NceProblem& problem, const MixtureModel& params) {
    check_model_dim(problem, params);
    return problem.contrast().evaluate(params.pack(), params.num_components(), nullptr);
}

Eigen::VectorXd mnce_gradient(const NceProblem& problem, const MixtureModel& params) {
    check_model_dim(problem, params);
    Eigen::VectorXd grad;
    problem.contrast().evaluate(params.pack(), params.num_components(), &grad);
    return grad;
}

DeepTransferProblem::DeepTransferProblem(Eigen::MatrixXd data_feats, std::vector<Eigen::MatrixXd> noise_feats_by_class,
                                         Eigen::MatrixXd weights)
    : data_feats_(std::move(data_feats)), noise_feats_(std::move(noise_feats_by_class)), weights_(std::move(weights)) {
    const Eigen::Index d = data_feats_.cols();
    if (data_feats_.rows() < 1) {
        throw std::invalid_argument("DeepTransferProblem: at least one data sample is required");
    }
    if (weights_.rows() < 1) {
        throw std::invalid_argument("DeepTransferProblem: at least one noise class is required");
    }
    if (weights_.cols() != d) {
        throw std::invalid_argument("DeepTransferProblem: weights have " + std::to_string(weights_.cols()) +
                                    " columns, features have " + std::to_string(d));
    }
    if (static_cast<Eigen::Index>(noise_feats_.size()) != weights_.rows()) {
        throw std::invalid_argument("DeepTransferProblem: " + std::to_string(noise_feats_.size()) +
                                    " noise classes but " + std::to_string(weights_.rows()) + " weight rows");
    }
    if (!weights_.allFinite()) {
        throw std::invalid_argument("DeepTransferProblem: weights must be finite");
    }
    if (!data_feats_.allFinite()) {
        throw std::invalid_argument("DeepTransferProblem: data features must be finite");
    }
    for (std::size_t l = 0; l < noise_feats_.size(); ++l) {
        if (noise_feats_[l].rows() < 1) {
            throw std::invalid_argument("DeepTransferProblem: noise class " + std::to_string(l) + " is empty");
        }
        if (noise_feats_[l].cols() != d) {
            throw std::invalid_argument("DeepTransferProblem: noise class " + std::to_string(l) + " has dimension " +
                                        std::to_string(noise_feats_[l].cols()) + ", data has " + std::to_string(d));
        }
        if (!noise_feats_[l].allFinite()) {
            throw std::invalid_argument("DeepTransferProblem: noise features must be finite");
        }
        counts_.push_back(static_cast<double>(noise_feats_[l].rows()));
    }

    // h cancels: every noise density is h * (M_1/M_l) exp(w_l . f), so the
    // noise mass is M_1 sum_l exp(w_l . f) and the numerator M_1 exp(w_l . f).
    const double log_m1 = std::log(counts_.front());
    contrast_.data_feats = data_feats_;
    contrast_.data_log_mass = row_log_sum_exp(data_feats_ * weights_.transpose()).array() + log_m1;
    const auto total = static_cast<Eigen::Index>(std::accumulate(counts_.begin(), counts_.end(), 0.0));
    contrast_.noise_feats.resize(total, d);
    contrast_.noise_log_numer.resize(total);
    contrast_.noise_log_mass.resize(total);
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l < noise_feats_.size(); ++l) {
        const auto& f = noise_feats_[l];
        const Eigen::MatrixXd scores = f * weights_.transpose();
        contrast_.noise_feats.middleRows(offset, f.rows()) = f;
        contrast_.noise_log_numer.segment(offset, f.rows()) = scores.col(static_cast<Eigen::Index>(l)).array() + log_m1;
        contrast_.noise_log_mass.segment(offset, f.rows()) = row_log_sum_exp(scores).array() + log_m1;
        offset += f.rows();
    }
}

namespace {

Eigen::VectorXd pack_params(const DeepTransferProblem& problem, const Eigen::MatrixXd& theta, const Eigen::VectorXd& c) {
    if (theta.rows() < 1 || theta.rows() != c.size()) {
        throw std::invalid_argument("deep_mnce_objective: theta must be K x d with K = len(c) >= 1");
    }
    if (theta.cols() != problem.dim()) {
        throw std::invalid_argument("deep_mnce_objective: theta has " + std::to_string(theta.cols()) +
                                    " columns, features have " + std::to_string(problem.dim()));
    }
    return MixtureModel(theta, c).pack();
}

}  // namespace

double deep_mnce_objective(const DeepTransferProblem& problem, const Eigen::MatrixXd& theta, const Eigen::VectorXd& c) {
    return problem.contrast().evaluate(pack_params(problem, theta, c), static_cast<int>(c.size()), nullptr);
}

Eigen::VectorXd deep_mnce_gradient(const DeepTransferProblem& problem, const Eigen::MatrixXd& theta,
                                   const Eigen::VectorXd& c) {
    Eigen::VectorXd grad;
    problem.contrast().evaluate(pack_params(problem, theta, c), static_cast<int>(c.size()), &grad);
    return grad;
}

}  // namespace nnmix
