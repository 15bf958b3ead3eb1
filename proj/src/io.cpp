#include "nnmix/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string_view>

namespace nnmix {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError(path, 0, "cannot open file");
    }
    return in;
}

std::ofstream open_output(const std::string& path) {
    const std::filesystem::path parent = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) {
        std::filesystem::create_directories(parent, ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    return out;
}

void finish_output(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) {
        throw std::runtime_error("write failed for " + path);
    }
}

template <typename T>
bool parse_number(std::string_view field, T& value) {
    field = trim(field);
    if (field.empty()) {
        return false;
    }
    // from_chars rejects a leading '+', which some writers emit
    if (field.front() == '+') {
        field.remove_prefix(1);
    }
    const char* end = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(field.data(), end, value);
    return ec == std::errc() && ptr == end;
}

FeatureHeader parse_header(const std::string& path, std::string_view line) {
    line = trim(line);
    if (line.empty() || line.front() != '#') {
        throw ParseError(path, 1, "expected header '# d=<d> n=<n>'");
    }
    line.remove_prefix(1);
    FeatureHeader header;
    bool seen_d = false;
    bool seen_n = false;
    while (true) {
        line = trim(line);
        if (line.empty()) {
            break;
        }
        const auto space = line.find_first_of(" \t");
        const std::string_view token = line.substr(0, space);
        line = space == std::string_view::npos ? std::string_view{} : line.substr(space);
        const auto eq = token.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError(path, 1, "malformed header token '" + std::string(token) + "'");
        }
        const std::string_view key = token.substr(0, eq);
        const std::string_view val = token.substr(eq + 1);
        if (key == "d") {
            if (!parse_number(val, header.dim) || header.dim < 1) {
                throw ParseError(path, 1, "d in header must be a positive integer");
            }
            seen_d = true;
        } else if (key == "n") {
            if (!parse_number(val, header.rows) || header.rows < 0) {
                throw ParseError(path, 1, "invalid n in header");
            }
            seen_n = true;
        } else if (key == "labels") {
            int flag = 0;
            if (!parse_number(val, flag) || (flag != 0 && flag != 1)) {
                throw ParseError(path, 1, "labels flag must be 0 or 1");
            }
            header.has_labels = flag == 1;
        } else {
            throw ParseError(path, 1, "unknown header key '" + std::string(key) + "'");
        }
    }
    if (!seen_d || !seen_n) {
        throw ParseError(path, 1, "header must declare both d and n");
    }
    return header;
}

FeatureHeader read_header_line(const std::string& path, std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(path, 1, "empty file");
    }
    return parse_header(path, line);
}

FeatureTable read_table(const std::string& path) {
    std::ifstream in = open_input(path);
    const FeatureHeader header = read_header_line(path, in);

    FeatureTable table;
    table.has_labels = header.has_labels;
    table.values.resize(header.rows, header.dim);
    if (header.has_labels) {
        table.labels.resize(static_cast<std::size_t>(header.rows));
    }
    const int fields_per_row = header.dim + (header.has_labels ? 1 : 0);

    std::string line;
    std::size_t line_no = 1;
    std::int64_t row = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view body = trim(line);
        if (body.empty()) {
            continue;
        }
        if (row >= header.rows) {
            throw ParseError(path, line_no, "more rows than declared n=" + std::to_string(header.rows));
        }
        std::size_t pos = 0;
        int field = 0;
        while (true) {
            const auto comma = body.find(',', pos);
            const std::string_view token =
                body.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
            if (field >= fields_per_row) {
                throw ParseError(path, line_no, "expected " + std::to_string(fields_per_row) + " fields");
            }
            if (header.has_labels && field == 0) {
                int label = 0;
                if (!parse_number(token, label) || label < 0) {
                    throw ParseError(path, line_no, "label must be a nonnegative integer");
                }
                table.labels[static_cast<std::size_t>(row)] = label;
            } else {
                double value = 0.0;
                if (!parse_number(token, value)) {
                    throw ParseError(path, line_no, "non-numeric field '" + std::string(trim(token)) + "'");
                }
                if (!std::isfinite(value)) {
                    throw ParseError(path, line_no, "non-finite value '" + std::string(trim(token)) + "'");
                }
                table.values(row, field - (header.has_labels ? 1 : 0)) = value;
            }
            ++field;
            if (comma == std::string_view::npos) {
                break;
            }
            pos = comma + 1;
        }
        if (field != fields_per_row) {
            throw ParseError(path, line_no,
                             "expected " + std::to_string(fields_per_row) + " fields, got " + std::to_string(field));
        }
        ++row;
    }
    if (row != header.rows) {
        throw ParseError(path, line_no,
                         "declared n=" + std::to_string(header.rows) + " but found " + std::to_string(row) + " rows");
    }
    return table;
}

void write_table(const std::string& path, const Eigen::MatrixXd& values, const std::vector<int>& labels) {
    if (!labels.empty() && labels.size() != static_cast<std::size_t>(values.rows())) {
        throw std::invalid_argument("write_features: label count must match row count");
    }
    if (values.cols() < 1) {
        throw std::invalid_argument("write_features: need at least one column");
    }
    if (!values.allFinite()) {
        throw std::invalid_argument("write_features: values must be finite");
    }
    std::ofstream out = open_output(path);
    out << "# d=" << values.cols() << " n=" << values.rows();
    if (!labels.empty()) {
        out << " labels=1";
    }
    out << '\n';
    std::string line;
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        line.clear();
        if (!labels.empty()) {
            line += std::to_string(labels[static_cast<std::size_t>(i)]);
        }
        for (Eigen::Index j = 0; j < values.cols(); ++j) {
            if (!line.empty() || j > 0) {
                line += ',';
            }
            line += format_double(values(i, j));
        }
        line += '\n';
        out << line;
    }
    finish_output(out, path);
}

// Non-finite doubles have no JSON literal; they travel as strings.
json number_json(double v) {
    if (std::isfinite(v)) {
        return v;
    }
    if (std::isnan(v)) {
        return "nan";
    }
    return v > 0 ? "inf" : "-inf";
}

double number_from(const json& j) {
    if (j.is_number()) {
        return j.get<double>();
    }
    const auto s = j.get<std::string>();
    if (s == "nan") {
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (s == "inf") {
        return std::numeric_limits<double>::infinity();
    }
    if (s == "-inf") {
        return -std::numeric_limits<double>::infinity();
    }
    throw std::invalid_argument("expected a number, got '" + s + "'");
}

json vector_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out.push_back(number_json(v(i)));
    }
    return out;
}

Eigen::VectorXd vector_from(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = number_from(j[i]);
    }
    return v;
}

// Row-major nested arrays plus explicit shape so K x 0 survives the trip.
json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        rows.push_back(vector_json(m.row(i).transpose()));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Eigen::MatrixXd matrix_from(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const json& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows) {
        throw std::invalid_argument("matrix row count disagrees with its shape");
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const json& r = data[static_cast<std::size_t>(i)];
        if (static_cast<Eigen::Index>(r.size()) != cols) {
            throw std::invalid_argument("matrix column count disagrees with its shape");
        }
        for (Eigen::Index k = 0; k < cols; ++k) {
            m(i, k) = number_from(r[static_cast<std::size_t>(k)]);
        }
    }
    return m;
}

json int_matrix_json(const Eigen::MatrixXi& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) {
            r.push_back(m(i, k));
        }
        rows.push_back(r);
    }
    return rows;
}

Eigen::MatrixXi int_matrix_from(const json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Eigen::MatrixXi m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const json& r = j[static_cast<std::size_t>(i)];
        if (static_cast<Eigen::Index>(r.size()) != cols) {
            throw std::invalid_argument("ragged confusion matrix");
        }
        for (Eigen::Index k = 0; k < cols; ++k) {
            m(i, k) = r[static_cast<std::size_t>(k)].get<int>();
        }
    }
    return m;
}

json one_based(const std::vector<int>& labels) {
    json out = json::array();
    for (int v : labels) {
        out.push_back(v + 1);
    }
    return out;
}

std::vector<int> zero_based(const json& j) {
    std::vector<int> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        const int label = v.get<int>();
        if (label < 1) {
            throw std::invalid_argument("labels in results files are one-based");
        }
        out.push_back(label - 1);
    }
    return out;
}

}  // namespace

ParseError::ParseError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(path + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
      path_(path),
      line_(line) {}

std::string format_double(double value) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) {
        throw std::runtime_error("format_double: conversion failed");
    }
    return std::string(buf, ptr);
}

FeatureHeader read_feature_header(const std::string& path) {
    std::ifstream in = open_input(path);
    return read_header_line(path, in);
}

FeatureTable read_features(const std::string& path) { return read_table(path); }

void write_features(const std::string& path, const Eigen::MatrixXd& values, const std::vector<int>& labels) {
    write_table(path, values, labels);
}

Eigen::MatrixXd read_weights(const std::string& path) {
    FeatureTable table = read_table(path);
    if (table.has_labels) {
        throw ParseError(path, 1, "weight files carry no label column");
    }
    if (table.values.rows() < 1) {
        throw ParseError(path, 1, "weight file needs at least one row");
    }
    return std::move(table.values);
}

void write_weights(const std::string& path, const Eigen::MatrixXd& weights) { write_table(path, weights, {}); }

std::vector<std::int64_t> read_counts(const std::string& path) {
    std::ifstream in = open_input(path);
    const FeatureHeader header = read_header_line(path, in);
    if (header.dim != 1 || header.has_labels) {
        throw ParseError(path, 1, "counts file header must be '# d=1 n=<L>'");
    }
    if (header.rows < 1) {
        throw ParseError(path, 1, "counts file needs at least one entry");
    }
    std::vector<std::int64_t> counts;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view body = trim(line);
        if (body.empty()) {
            continue;
        }
        std::int64_t value = 0;
        if (!parse_number(body, value)) {
            throw ParseError(path, line_no, "count must be an integer, got '" + std::string(body) + "'");
        }
        if (value < 1) {
            throw ParseError(path, line_no, "count must be positive");
        }
        if (static_cast<std::int64_t>(counts.size()) >= header.rows) {
            throw ParseError(path, line_no, "more rows than declared n=" + std::to_string(header.rows));
        }
        counts.push_back(value);
    }
    if (static_cast<std::int64_t>(counts.size()) != header.rows) {
        throw ParseError(path, line_no, "declared n=" + std::to_string(header.rows) + " but found " +
                                            std::to_string(counts.size()) + " rows");
    }
    return counts;
}

void write_counts(const std::string& path, const std::vector<std::int64_t>& counts) {
    if (counts.empty() || std::any_of(counts.begin(), counts.end(), [](std::int64_t v) { return v < 1; })) {
        throw std::invalid_argument("write_counts: counts must be nonempty and positive");
    }
    std::ofstream out = open_output(path);
    out << "# d=1 n=" << counts.size() << '\n';
    for (std::int64_t v : counts) {
        out << v << '\n';
    }
    finish_output(out, path);
}

TransferBundle load_transfer_bundle(const std::string& data_path, const std::vector<std::string>& noise_paths,
                                    const std::string& weights_path, const std::optional<std::string>& counts_path) {
    if (noise_paths.empty()) {
        throw DimensionError("at least one noise feature file is required");
    }
    const FeatureHeader data_header = read_feature_header(data_path);
    const FeatureHeader weights_header = read_feature_header(weights_path);
    const int d = data_header.dim;
    if (weights_header.dim != d) {
        throw DimensionError("weights have d=" + std::to_string(weights_header.dim) + " but features have d=" +
                             std::to_string(d));
    }
    if (weights_header.rows != static_cast<std::int64_t>(noise_paths.size())) {
        throw DimensionError("weights have " + std::to_string(weights_header.rows) + " rows but " +
                             std::to_string(noise_paths.size()) + " noise files were given");
    }
    std::vector<std::int64_t> noise_rows;
    for (const auto& p : noise_paths) {
        const FeatureHeader h = read_feature_header(p);
        if (h.dim != d) {
            throw DimensionError(p + " has d=" + std::to_string(h.dim) + " but features have d=" + std::to_string(d));
        }
        noise_rows.push_back(h.rows);
    }
    if (counts_path) {
        const auto counts = read_counts(*counts_path);
        if (counts != noise_rows) {
            throw DimensionError("counts file disagrees with the noise file row counts");
        }
    }

    TransferBundle bundle;
    bundle.data = read_features(data_path);
    bundle.weights = read_weights(weights_path);
    for (const auto& p : noise_paths) {
        bundle.noise.push_back(read_features(p).values);
    }
    return bundle;
}

PosteriorSummary summarize_posteriors(const Eigen::MatrixXd& probs) {
    if (probs.rows() == 0 || probs.cols() == 0) {
        return {};
    }
    std::vector<double> best(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        best[static_cast<std::size_t>(i)] = probs.row(i).maxCoeff();
    }
    std::sort(best.begin(), best.end());
    const std::size_t n = best.size();
    PosteriorSummary s;
    s.min = best.front();
    s.max = best.back();
    s.median = n % 2 == 1 ? best[n / 2] : 0.5 * (best[n / 2 - 1] + best[n / 2]);
    return s;
}

void attach_clustering(ResultsDocument& doc, const PosteriorMatrix& post, const std::vector<int>& reference) {
    const ClusterReport report = make_cluster_report(post, reference);
    doc.assignments = report.assignments;
    doc.alignment = report.alignment;
    doc.posteriors = post.probs();
    doc.posterior_summary = summarize_posteriors(doc.posteriors);
    if (post.cols() >= 2) {
        doc.logit_scores.resize(post.rows(), post.cols());
        for (int k = 0; k < post.cols(); ++k) {
            doc.logit_scores.col(k) = logit_score(post, k);
        }
    } else {
        doc.logit_scores.resize(post.rows(), 0);
    }
}

ResultsDocument make_results(const std::string& method, const EstimationResult& fit) {
    ResultsDocument doc;
    doc.method = method;
    doc.theta = fit.theta;
    doc.c = fit.c;
    doc.objective = fit.objective;
    doc.converged = fit.converged;
    doc.best_start = fit.best_start;
    for (const auto& s : fit.starts) {
        doc.starts.push_back({s.value, s.converged, s.failed, s.iterations, to_string(s.reason)});
    }
    return doc;
}

nlohmann::json results_to_json(const ResultsDocument& doc) {
    json j;
    j["schema_version"] = doc.schema_version;
    j["method"] = doc.method;
    j["theta"] = matrix_json(doc.theta);
    j["c"] = vector_json(doc.c);
    j["objective"] = number_json(doc.objective);
    j["converged"] = doc.converged;
    j["best_start"] = doc.best_start + 1;
    json starts = json::array();
    for (const auto& s : doc.starts) {
        starts.push_back({{"value", number_json(s.value)},
                          {"converged", s.converged},
                          {"failed", s.failed},
                          {"iterations", s.iterations},
                          {"reason", s.reason}});
    }
    j["starts"] = starts;
    if (doc.gmm) {
        j["gmm"] = {{"covariance", to_string(doc.gmm->covariance)},
                    {"weights", vector_json(doc.gmm->weights)},
                    {"means", matrix_json(doc.gmm->means)},
                    {"variances", matrix_json(doc.gmm->variances)}};
    } else {
        j["gmm"] = nullptr;
    }
    j["assignments"] = one_based(doc.assignments);
    j["posteriors"] = matrix_json(doc.posteriors);
    j["logit_scores"] = matrix_json(doc.logit_scores);
    j["posterior_summary"] = {{"min", number_json(doc.posterior_summary.min)},
                              {"median", number_json(doc.posterior_summary.median)},
                              {"max", number_json(doc.posterior_summary.max)}};
    if (doc.alignment) {
        j["alignment"] = {{"permutation", one_based(doc.alignment->permutation)},
                          {"accuracy", number_json(doc.alignment->accuracy)},
                          {"confusion", int_matrix_json(doc.alignment->confusion)}};
    } else {
        j["alignment"] = nullptr;
    }
    j["metadata"] = doc.metadata;
    return j;
}

ResultsDocument results_from_json(const nlohmann::json& j) {
    ResultsDocument doc;
    doc.schema_version = j.at("schema_version").get<int>();
    if (doc.schema_version != kResultsSchemaVersion) {
        throw std::invalid_argument("unsupported results schema_version " + std::to_string(doc.schema_version));
    }
    doc.method = j.at("method").get<std::string>();
    doc.theta = matrix_from(j.at("theta"));
    doc.c = vector_from(j.at("c"));
    doc.objective = number_from(j.at("objective"));
    doc.converged = j.at("converged").get<bool>();
    doc.best_start = j.at("best_start").get<int>() - 1;
    for (const auto& s : j.at("starts")) {
        doc.starts.push_back({number_from(s.at("value")), s.at("converged").get<bool>(), s.at("failed").get<bool>(),
                              s.at("iterations").get<int>(), s.at("reason").get<std::string>()});
    }
    if (!j.at("gmm").is_null()) {
        const json& g = j.at("gmm");
        GmmParams p;
        p.covariance = parse_covariance_type(g.at("covariance").get<std::string>());
        p.weights = vector_from(g.at("weights"));
        p.means = matrix_from(g.at("means"));
        p.variances = matrix_from(g.at("variances"));
        doc.gmm = p;
    }
    doc.assignments = zero_based(j.at("assignments"));
    doc.posteriors = matrix_from(j.at("posteriors"));
    doc.logit_scores = matrix_from(j.at("logit_scores"));
    const json& ps = j.at("posterior_summary");
    doc.posterior_summary = {number_from(ps.at("min")), number_from(ps.at("median")), number_from(ps.at("max"))};
    if (!j.at("alignment").is_null()) {
        const json& a = j.at("alignment");
        Alignment al;
        al.permutation = zero_based(a.at("permutation"));
        al.accuracy = number_from(a.at("accuracy"));
        al.confusion = int_matrix_from(a.at("confusion"));
        doc.alignment = al;
    }
    doc.metadata = j.at("metadata");
    return doc;
}

void write_results(const std::string& path, const ResultsDocument& doc) {
    std::ofstream out = open_output(path);
    out << results_to_json(doc).dump(2) << '\n';
    finish_output(out, path);
}

ResultsDocument read_results(const std::string& path) {
    std::ifstream in = open_input(path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path, 0, e.what());
    }
    try {
        return results_from_json(j);
    } catch (const json::exception& e) {
        throw ParseError(path, 0, e.what());
    }
}

}  // namespace nnmix
