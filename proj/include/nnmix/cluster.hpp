#ifndef NNMIX_CLUSTER_HPP
#define NNMIX_CLUSTER_HPP

#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace nnmix {

/// Row-stochastic N x K matrix of cluster posteriors.
///
/// Stored in log form so that logit scores stay accurate when a posterior
/// saturates at 0 or 1.
class PosteriorMatrix {
public:
    /// Normalizes each row of unnormalized log-weights (logits).
    /// Throws std::domain_error if a row is entirely -inf or contains NaN/+inf.
    static PosteriorMatrix from_logits(const Eigen::MatrixXd& logits);

    /// Wraps explicit probabilities; rows must be nonnegative and sum to 1 within 1e-9.
    static PosteriorMatrix from_probabilities(const Eigen::MatrixXd& probs);

    int rows() const { return static_cast<int>(log_probs_.rows()); }
    int cols() const { return static_cast<int>(log_probs_.cols()); }
    const Eigen::MatrixXd& log_probs() const { return log_probs_; }
    Eigen::MatrixXd probs() const { return log_probs_.array().exp().matrix(); }
    double operator()(int row, int col) const;

private:
    explicit PosteriorMatrix(Eigen::MatrixXd log_probs) : log_probs_(std::move(log_probs)) {}
    Eigen::MatrixXd log_probs_;
};

/// Softmax over theta_k . f + c_k for every row of `feats`.
PosteriorMatrix posterior(const Eigen::MatrixXd& theta, const Eigen::VectorXd& c, const Eigen::MatrixXd& feats);

/// Zero-based argmax per row; exact ties go to the lower index.
std::vector<int> hard_assign(const PosteriorMatrix& post);

/// log p_k - log(1 - p_k) per row for zero-based cluster k.
/// Throws std::invalid_argument when K < 2 or k is out of range.
Eigen::VectorXd logit_score(const PosteriorMatrix& post, int k);

struct Alignment {
    /// permutation[e] is the reference label matched to estimated label e.
    std::vector<int> permutation;
    double accuracy = 0.0;
    /// Rows: estimated clusters after relabeling; columns: reference labels.
    Eigen::MatrixXi confusion;
};

/// Best relabeling of zero-based estimated labels against reference labels
/// by exhaustive search. Supports up to 8 labels on either side.
Alignment align_labels(const std::vector<int>& estimated, const std::vector<int>& reference);

/// Same search directly on a confusion matrix (rows estimated, columns reference).
Alignment align_confusion(const Eigen::MatrixXi& confusion);

/// Hard clustering of N points, optionally scored against reference labels.
struct ClusterReport {
    std::vector<int> assignments;  // zero-based
    std::optional<Alignment> alignment;
};

/// hard_assign plus, when `reference` is non-empty, align_labels against it.
ClusterReport make_cluster_report(const PosteriorMatrix& post, const std::vector<int>& reference = {});

struct SortedComponents {
    Eigen::MatrixXd theta;
    Eigen::VectorXd c;
    std::vector<int> order;  // new position j holds old component order[j]
};

/// Orders 1-D Gaussian components (theta rows (theta1, theta2)) by their
/// implied mean -theta2 / (2 theta1), ascending. Throws std::domain_error if
/// any theta1 >= 0.
SortedComponents sort_components_by_mean(const Eigen::MatrixXd& theta, const Eigen::VectorXd& c);

}  // namespace nnmix

#endif
