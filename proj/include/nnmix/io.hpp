#ifndef NNMIX_IO_HPP
#define NNMIX_IO_HPP

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "nnmix/cluster.hpp"
#include "nnmix/em.hpp"
#include "nnmix/estimate.hpp"

namespace nnmix {

/// Malformed input file. `line` is 1-based, 0 when the problem is not tied to a line.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& path, std::size_t line, const std::string& what);
    const std::string& path() const { return path_; }
    std::size_t line() const { return line_; }

private:
    std::string path_;
    std::size_t line_;
};

/// Inputs whose shapes disagree with each other.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Header line `# d=<d> n=<n>` with an optional trailing `labels=1`.
struct FeatureHeader {
    int dim = 0;
    std::int64_t rows = 0;
    bool has_labels = false;
};

/// In-memory feature file. Labels, when present, are the integer first
/// column of every row and are kept as written.
struct FeatureTable {
    Eigen::MatrixXd values;  // n x d
    std::vector<int> labels;
    bool has_labels = false;
};

/// Reads only the header line.
FeatureHeader read_feature_header(const std::string& path);

FeatureTable read_features(const std::string& path);

/// Writes shortest round-trip decimal text. A non-empty `labels` must have one entry per row.
void write_features(const std::string& path, const Eigen::MatrixXd& values, const std::vector<int>& labels = {});

/// Weight files share the feature format (L rows x d columns, no labels).
Eigen::MatrixXd read_weights(const std::string& path);
void write_weights(const std::string& path, const Eigen::MatrixXd& weights);

/// Counts file: header `# d=1 n=<L>` and one positive integer per line.
std::vector<std::int64_t> read_counts(const std::string& path);
void write_counts(const std::string& path, const std::vector<std::int64_t>& counts);

/// Inputs of a deep-transfer clustering run, loaded and cross-checked.
struct TransferBundle {
    FeatureTable data;
    std::vector<Eigen::MatrixXd> noise;  // one M_l x d matrix per class
    Eigen::MatrixXd weights;             // L x d
};

/// Checks every header for a common d and L = number of noise files before
/// parsing any body, then loads the files. When `counts_path` is given, its
/// entries must equal the noise row counts.
TransferBundle load_transfer_bundle(const std::string& data_path, const std::vector<std::string>& noise_paths,
                                    const std::string& weights_path,
                                    const std::optional<std::string>& counts_path = std::nullopt);

struct StartRecord {
    double value = 0.0;
    bool converged = false;
    bool failed = false;
    int iterations = 0;
    std::string reason;
};

struct PosteriorSummary {
    double min = 0.0;
    double median = 0.0;
    double max = 0.0;
};

/// Min, median and max over rows of the largest posterior in the row.
PosteriorSummary summarize_posteriors(const Eigen::MatrixXd& probs);

inline constexpr int kResultsSchemaVersion = 1;

/// Results document written by the estimation subcommands. Labels are
/// zero-based in memory and one-based in the file.
struct ResultsDocument {
    int schema_version = kResultsSchemaVersion;
    std::string method;
    Eigen::MatrixXd theta;  // K x d, empty when the fit has no natural-parameter form
    Eigen::VectorXd c;
    double objective = 0.0;
    bool converged = false;
    int best_start = 0;
    std::vector<StartRecord> starts;
    std::optional<GmmParams> gmm;
    std::vector<int> assignments;
    Eigen::MatrixXd posteriors;    // N x K
    Eigen::MatrixXd logit_scores;  // N x K, empty when K = 1
    PosteriorSummary posterior_summary;
    std::optional<Alignment> alignment;
    nlohmann::json metadata = nlohmann::json::object();
};

/// Fills the clustering fields (assignments, posteriors, logit scores, summary, alignment).
void attach_clustering(ResultsDocument& doc, const PosteriorMatrix& post, const std::vector<int>& reference = {});

ResultsDocument make_results(const std::string& method, const EstimationResult& fit);

nlohmann::json results_to_json(const ResultsDocument& doc);
ResultsDocument results_from_json(const nlohmann::json& j);

void write_results(const std::string& path, const ResultsDocument& doc);
ResultsDocument read_results(const std::string& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace nnmix

#endif
