#include "nnmix/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "nnmix/model.hpp"

namespace nnmix {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kMaxAlignLabels = 8;

}  // namespace

PosteriorMatrix PosteriorMatrix::from_logits(const Eigen::MatrixXd& logits) {
    if (logits.cols() < 1) {
        throw std::invalid_argument("posterior: need at least one cluster");
    }
    Eigen::MatrixXd log_probs(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        if (logits.row(i).array().isNaN().any() ||
            (logits.row(i).array() == std::numeric_limits<double>::infinity()).any()) {
            throw std::domain_error("posterior: row " + std::to_string(i) + " has NaN or +inf logits");
        }
        const double m = logits.row(i).maxCoeff();
        if (m == kNegInf) {
            throw std::domain_error("posterior: row " + std::to_string(i) + " has all logits -inf");
        }
        const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        log_probs.row(i) = logits.row(i).array() - lse;
    }
    return PosteriorMatrix(std::move(log_probs));
}

PosteriorMatrix PosteriorMatrix::from_probabilities(const Eigen::MatrixXd& probs) {
    if (probs.cols() < 1) {
        throw std::invalid_argument("posterior: need at least one cluster");
    }
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        if ((probs.row(i).array() < 0.0).any() || std::abs(probs.row(i).sum() - 1.0) > 1e-9) {
            throw std::invalid_argument("posterior: row " + std::to_string(i) + " is not a probability vector");
        }
    }
    return PosteriorMatrix(probs.array().log().matrix());
}

double PosteriorMatrix::operator()(int row, int col) const { return std::exp(log_probs_(row, col)); }

PosteriorMatrix posterior(const Eigen::MatrixXd& theta, const Eigen::VectorXd& c, const Eigen::MatrixXd& feats) {
    if (theta.rows() != c.size() || feats.cols() != theta.cols()) {
        throw std::invalid_argument("posterior: inconsistent shapes");
    }
    if (!theta.allFinite() || !c.allFinite()) {
        throw std::invalid_argument("posterior: parameters must be finite");
    }
    // offsets enter relative to their maximum so a common shift of c cancels exactly
    const Eigen::VectorXd rel = c.array() - c.maxCoeff();
    Eigen::MatrixXd logits = feats * theta.transpose();
    logits.rowwise() += rel.transpose();
    return PosteriorMatrix::from_logits(logits);
}

std::vector<int> hard_assign(const PosteriorMatrix& post) {
    std::vector<int> labels(static_cast<std::size_t>(post.rows()));
    const auto& lp = post.log_probs();
    for (Eigen::Index i = 0; i < lp.rows(); ++i) {
        int best = 0;
        for (Eigen::Index k = 1; k < lp.cols(); ++k) {
            if (lp(i, k) > lp(i, best)) {
                best = static_cast<int>(k);
            }
        }
        labels[static_cast<std::size_t>(i)] = best;
    }
    return labels;
}

Eigen::VectorXd logit_score(const PosteriorMatrix& post, int k) {
    if (post.cols() < 2) {
        throw std::invalid_argument("logit_score: need at least two clusters");
    }
    if (k < 0 || k >= post.cols()) {
        throw std::invalid_argument("logit_score: cluster index out of range");
    }
    const auto& lp = post.log_probs();
    Eigen::VectorXd out(lp.rows());
    std::vector<double> others(static_cast<std::size_t>(lp.cols() - 1));
    for (Eigen::Index i = 0; i < lp.rows(); ++i) {
        std::size_t j = 0;
        for (Eigen::Index m = 0; m < lp.cols(); ++m) {
            if (m != k) {
                others[j++] = lp(i, m);
            }
        }
        // log(1 - p_k) = log sum_{m != k} p_m; all-zero others saturate to +inf.
        bool all_neg_inf = std::all_of(others.begin(), others.end(), [](double v) { return v == kNegInf; });
        const double log_rest = all_neg_inf ? kNegInf : log_sum_exp(others);
        out(i) = lp(i, k) - log_rest;
    }
    return out;
}

Alignment align_confusion(const Eigen::MatrixXi& confusion) {
    const auto num_est = static_cast<int>(confusion.rows());
    const auto num_ref = static_cast<int>(confusion.cols());
    if (num_est > kMaxAlignLabels || num_ref > kMaxAlignLabels) {
        throw std::invalid_argument("align_labels: at most " + std::to_string(kMaxAlignLabels) +
                                    " labels are supported");
    }
    const int n = std::max(num_est, num_ref);
    Eigen::MatrixXi square = Eigen::MatrixXi::Zero(n, n);
    square.topLeftCorner(num_est, num_ref) = confusion;

    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best_perm = perm;
    long long best_hits = -1;
    do {
        long long hits = 0;
        for (int e = 0; e < n; ++e) {
            hits += square(e, perm[static_cast<std::size_t>(e)]);
        }
        if (hits > best_hits) {
            best_hits = hits;
            best_perm = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));

    Alignment out;
    out.permutation = best_perm;
    // Row r of the relabeled confusion collects the estimated cluster mapped to reference label r.
    out.confusion = Eigen::MatrixXi::Zero(n, num_ref);
    for (int e = 0; e < n; ++e) {
        out.confusion.row(best_perm[static_cast<std::size_t>(e)]) = square.row(e).head(num_ref);
    }
    const long long total = confusion.cast<long long>().sum();
    out.accuracy = total > 0 ? static_cast<double>(best_hits) / static_cast<double>(total) : 0.0;
    return out;
}

Alignment align_labels(const std::vector<int>& estimated, const std::vector<int>& reference) {
    if (estimated.size() != reference.size()) {
        throw std::invalid_argument("align_labels: label vectors differ in length");
    }
    int num_est = 0;
    int num_ref = 0;
    for (std::size_t i = 0; i < estimated.size(); ++i) {
        if (estimated[i] < 0 || reference[i] < 0) {
            throw std::invalid_argument("align_labels: labels must be nonnegative");
        }
        num_est = std::max(num_est, estimated[i] + 1);
        num_ref = std::max(num_ref, reference[i] + 1);
    }
    if (num_est > kMaxAlignLabels || num_ref > kMaxAlignLabels) {
        throw std::invalid_argument("align_labels: at most " + std::to_string(kMaxAlignLabels) +
                                    " labels are supported");
    }
    Eigen::MatrixXi confusion = Eigen::MatrixXi::Zero(std::max(num_est, 1), std::max(num_ref, 1));
    for (std::size_t i = 0; i < estimated.size(); ++i) {
        ++confusion(estimated[i], reference[i]);
    }
    return align_confusion(confusion);
}

ClusterReport make_cluster_report(const PosteriorMatrix& post, const std::vector<int>& reference) {
    ClusterReport report;
    report.assignments = hard_assign(post);
    if (!reference.empty()) {
        report.alignment = align_labels(report.assignments, reference);
    }
    return report;
}

SortedComponents sort_components_by_mean(const Eigen::MatrixXd& theta, const Eigen::VectorXd& c) {
    if (theta.cols() != 2 || theta.rows() != c.size()) {
        throw std::invalid_argument("sort_components_by_mean: expected K x 2 natural parameters and K offsets");
    }
    const auto k = static_cast<int>(theta.rows());
    std::vector<double> means(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        if (!(theta(i, 0) < 0.0)) {
            throw std::domain_error("sort_components_by_mean: component " + std::to_string(i) +
                                    " has theta1 >= 0 and is not integrable");
        }
        means[static_cast<std::size_t>(i)] = -theta(i, 1) / (2.0 * theta(i, 0));
    }
    SortedComponents out;
    out.order.resize(static_cast<std::size_t>(k));
    std::iota(out.order.begin(), out.order.end(), 0);
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](int a, int b) { return means[static_cast<std::size_t>(a)] < means[static_cast<std::size_t>(b)]; });
    out.theta.resize(k, 2);
    out.c.resize(k);
    for (int j = 0; j < k; ++j) {
        out.theta.row(j) = theta.row(out.order[static_cast<std::size_t>(j)]);
        out.c(j) = c(out.order[static_cast<std::size_t>(j)]);
    }
    return out;
}

}  // namespace nnmix
