#include "nnmix/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "nnmix/model.hpp"
#include "nnmix/nce.hpp"
#include "nnmix/parallel.hpp"

namespace nnmix {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream ids for the child generators of one (N, replicate) task.
enum Stream : std::uint64_t { data_stream = 0, single_noise_stream = 1, two_noise_stream = 2, start_stream = 3 };

NoiseGroup gaussian_group(double mu, double sigma2, std::size_t m, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(mu, std::sqrt(sigma2));
    NoiseGroup g;
    g.samples.resize(static_cast<Eigen::Index>(m), 1);
    for (Eigen::Index i = 0; i < g.samples.rows(); ++i) {
        g.samples(i, 0) = normal(rng);
    }
    g.log_density = [mu, sigma2](const Eigen::Ref<const Eigen::VectorXd>& x) { return gaussian_log_pdf(x(0), mu, sigma2); };
    return g;
}

Eigen::VectorXd quadratic_feature_fn(const Eigen::Ref<const Eigen::VectorXd>& x) { return quadratic_features(x(0)); }

struct Errors {
    double theta = kNaN;
    double c = kNaN;
    bool ordered = false;
};

Errors squared_errors(const Eigen::MatrixXd& theta, const Eigen::VectorXd& c, const MixtureModel& truth) {
    Errors e;
    Eigen::MatrixXd t = theta;
    Eigen::VectorXd cc = c;
    try {
        const SortedComponents sorted = sort_components_by_mean(theta, c);
        t = sorted.theta;
        cc = sorted.c;
        e.ordered = true;
    } catch (const std::domain_error&) {
        // improper component: no mean to sort by, keep the fitted order
    }
    e.theta = (t - truth.theta()).squaredNorm();
    e.c = (cc - truth.c()).squaredNorm();
    return e;
}

std::vector<SimResultRow> run_task(const SimConfig& config, int n, int replicate) {
    const std::uint64_t task_seed =
        derive_seed(derive_seed(config.seed, static_cast<std::uint64_t>(n)), static_cast<std::uint64_t>(replicate));
    const MixtureModel truth = simulation_truth();

    std::mt19937_64 data_rng(derive_seed(task_seed, data_stream));
    const std::vector<double> xs = generate_mixture_data(static_cast<std::size_t>(n), data_rng);
    const Eigen::MatrixXd data = Eigen::Map<const Eigen::VectorXd>(xs.data(), n);

    OptimizerConfig opt = config.optimizer;
    opt.threads = 1;
    opt.seed = derive_seed(task_seed, start_stream);

    std::vector<SimResultRow> rows;
    const auto ordered_schemes = std::vector<NoiseScheme>{NoiseScheme::single_moment_matched,
                                                          NoiseScheme::two_true_components};
    for (NoiseScheme scheme : ordered_schemes) {
        if (std::find(config.schemes.begin(), config.schemes.end(), scheme) == config.schemes.end()) {
            continue;
        }
        NoiseSpec noise;
        if (scheme == NoiseScheme::single_moment_matched) {
            std::mt19937_64 rng(derive_seed(task_seed, single_noise_stream));
            double mu = 2.0;
            double sigma2 = 5.0;
            if (config.moments == MomentSource::sample) {
                const MomentMatch mm = moment_matched_gaussian(xs);
                mu = mm.mean;
                sigma2 = mm.variance;
            }
            noise.groups.push_back(gaussian_group(mu, sigma2, static_cast<std::size_t>(n), rng));
        } else {
            std::mt19937_64 rng(derive_seed(task_seed, two_noise_stream));
            const auto half = static_cast<std::size_t>(n / 2);
            noise.groups.push_back(gaussian_group(0.0, 1.0, half, rng));
            noise.groups.push_back(gaussian_group(4.0, 1.0, static_cast<std::size_t>(n) - half, rng));
        }
        const NceProblem problem = NceProblem::build(data, noise, quadratic_feature_fn);

        SimResultRow row{n, method_id(scheme), replicate, kNaN, kNaN, false};
        try {
            const EstimationResult fit = estimate_mixture(problem, 2, opt);
            const Errors e = squared_errors(fit.theta, fit.c, truth);
            row.err_theta = e.theta;
            row.err_c = e.c;
            row.converged = fit.converged && e.ordered;
        } catch (const OptimizationError&) {
            row.converged = false;
        }
        rows.push_back(row);
    }

    if (config.include_mle) {
        SimResultRow row{n, "mle", replicate, kNaN, kNaN, false};
        EmConfig em = config.em;
        em.seed = derive_seed(task_seed, start_stream);
        try {
            const EmResult fit = em_fit(data, 2, CovarianceType::diagonal, em);
            const MixtureModel natural = gmm_to_natural(fit.params);
            const Errors e = squared_errors(natural.theta(), natural.c(), truth);
            row.err_theta = e.theta;
            row.err_c = e.c;
            row.converged = fit.converged && e.ordered;
        } catch (const EmError&) {
            row.converged = false;
        }
        rows.push_back(row);
    }
    return rows;
}

double median_of(std::vector<double> v) {
    if (v.empty()) {
        return kNaN;
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string csv_number(double v) {
    if (std::isnan(v)) {
        return "NA";
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_csv(const std::string& path) {
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

void close_csv(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) {
        throw std::runtime_error("write failed for " + path);
    }
}

}  // namespace

std::vector<double> generate_mixture_data(std::size_t n, std::mt19937_64& rng) {
    if (n < 1) {
        throw std::invalid_argument("generate_mixture_data: n must be >= 1");
    }
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> out(n);
    for (auto& x : out) {
        const double mean = coin(rng) ? 4.0 : 0.0;
        x = mean + normal(rng);
    }
    return out;
}

MixtureModel simulation_truth() {
    return MixtureModel({gaussian_natural_params({0.0, 1.0, 0.5}), gaussian_natural_params({4.0, 1.0, 0.5})},
                        "quadratic");
}

const char* to_string(NoiseScheme scheme) {
    return scheme == NoiseScheme::single_moment_matched ? "single-moment-matched" : "two-true-components";
}

NoiseScheme parse_noise_scheme(const std::string& name) {
    if (name == "single-moment-matched" || name == "nce" || name == "single") {
        return NoiseScheme::single_moment_matched;
    }
    if (name == "two-true-components" || name == "mnce" || name == "two") {
        return NoiseScheme::two_true_components;
    }
    throw std::invalid_argument("unknown noise scheme '" + name + "'");
}

const char* method_id(NoiseScheme scheme) { return scheme == NoiseScheme::single_moment_matched ? "nce" : "mnce"; }

const char* to_string(MomentSource source) { return source == MomentSource::population ? "population" : "sample"; }

MomentSource parse_moment_source(const std::string& name) {
    if (name == "population") {
        return MomentSource::population;
    }
    if (name == "sample") {
        return MomentSource::sample;
    }
    throw std::invalid_argument("unknown moment source '" + name + "'");
}

OptimizerConfig SimConfig::default_optimizer() {
    OptimizerConfig opt;
    opt.n_starts = 5;
    return opt;
}

void SimConfig::validate() const {
    if (sample_sizes.empty()) {
        throw std::invalid_argument("SimConfig: sample_sizes must be nonempty");
    }
    for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
        if (sample_sizes[i] < 4) {
            throw std::invalid_argument("SimConfig: sample sizes must be at least 4");
        }
        if (i > 0 && sample_sizes[i] <= sample_sizes[i - 1]) {
            throw std::invalid_argument("SimConfig: sample sizes must be strictly ascending");
        }
    }
    if (replicates < 1) {
        throw std::invalid_argument("SimConfig: replicates must be >= 1");
    }
    if (schemes.empty() && !include_mle) {
        throw std::invalid_argument("SimConfig: nothing to run");
    }
    optimizer.validate();
}

std::vector<SimResultRow> run_simulation(const SimConfig& config) {
    config.validate();
    struct Task {
        int n;
        int replicate;
    };
    std::vector<Task> tasks;
    for (int n : config.sample_sizes) {
        for (int r = 0; r < config.replicates; ++r) {
            tasks.push_back({n, r});
        }
    }
    std::vector<std::vector<SimResultRow>> out(tasks.size());
    parallel_for(tasks.size(), resolve_threads(config.threads),
                 [&](std::size_t i) { out[i] = run_task(config, tasks[i].n, tasks[i].replicate); });
    std::vector<SimResultRow> rows;
    for (auto& chunk : out) {
        rows.insert(rows.end(), chunk.begin(), chunk.end());
    }
    return rows;
}

std::vector<MedianRow> summarize_medians(const std::vector<SimResultRow>& rows) {
    std::vector<std::string> methods;
    std::map<int, std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>> cells;
    std::map<int, std::map<std::string, int>> excluded;
    for (const auto& r : rows) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
            methods.push_back(r.method);
        }
        auto& cell = cells[r.n][r.method];
        if (r.converged && std::isfinite(r.err_theta) && std::isfinite(r.err_c)) {
            cell.first.push_back(r.err_theta);
            cell.second.push_back(r.err_c);
        } else {
            ++excluded[r.n][r.method];
        }
    }
    std::vector<MedianRow> out;
    for (const auto& [n, by_method] : cells) {
        for (const auto& m : methods) {
            const auto it = by_method.find(m);
            if (it == by_method.end()) {
                continue;
            }
            MedianRow row;
            row.n = n;
            row.method = m;
            row.med_theta = median_of(it->second.first);
            row.med_c = median_of(it->second.second);
            row.used = static_cast<int>(it->second.first.size());
            row.excluded = excluded[n][m];
            out.push_back(row);
        }
    }
    return out;
}

double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("least_squares_slope: need at least two paired points");
    }
    const auto n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if (sxx == 0.0) {
        throw std::invalid_argument("least_squares_slope: x values are all equal");
    }
    return sxy / sxx;
}

std::vector<SlopeRow> consistency_slopes(const std::vector<MedianRow>& medians, int n_min, int n_max) {
    std::vector<std::string> methods;
    for (const auto& m : medians) {
        if (std::find(methods.begin(), methods.end(), m.method) == methods.end()) {
            methods.push_back(m.method);
        }
    }
    std::vector<SlopeRow> out;
    for (const auto& method : methods) {
        std::vector<double> xt, yt, xc, yc;
        for (const auto& m : medians) {
            if (m.method != method || m.n < n_min || m.n > n_max) {
                continue;
            }
            const double lx = std::log2(static_cast<double>(m.n));
            if (std::isfinite(m.med_theta) && m.med_theta > 0.0) {
                xt.push_back(lx);
                yt.push_back(std::log2(m.med_theta));
            }
            if (std::isfinite(m.med_c) && m.med_c > 0.0) {
                xc.push_back(lx);
                yc.push_back(std::log2(m.med_c));
            }
        }
        SlopeRow row;
        row.method = method;
        row.slope_theta = xt.size() >= 2 ? least_squares_slope(xt, yt) : kNaN;
        row.slope_c = xc.size() >= 2 ? least_squares_slope(xc, yc) : kNaN;
        row.points = static_cast<int>(std::min(xt.size(), xc.size()));
        out.push_back(row);
    }
    return out;
}

void write_rows_csv(const std::string& path, const std::vector<SimResultRow>& rows) {
    std::ofstream out = open_csv(path);
    out << "N,method,replicate,err_theta,err_c,converged\n";
    for (const auto& r : rows) {
        out << r.n << ',' << r.method << ',' << r.replicate + 1 << ',' << csv_number(r.err_theta) << ','
            << csv_number(r.err_c) << ',' << (r.converged ? 1 : 0) << '\n';
    }
    close_csv(out, path);
}

void write_medians_csv(const std::string& path, const std::vector<MedianRow>& medians) {
    std::ofstream out = open_csv(path);
    out << "N,method,med_theta,med_c\n";
    for (const auto& m : medians) {
        out << m.n << ',' << m.method << ',' << csv_number(m.med_theta) << ',' << csv_number(m.med_c) << '\n';
    }
    close_csv(out, path);
}

TransferSpec TransferSpec::standard() {
    TransferSpec spec;
    const int d = 5;
    const double r = 3.0;
    spec.noise_weights = Eigen::MatrixXd::Zero(3, d);
    for (int l = 0; l < 3; ++l) {
        spec.noise_weights(l, l) = r;
    }
    spec.cluster_means = Eigen::MatrixXd::Zero(2, d);
    spec.cluster_means.row(0) << 3.0, 0.0, 0.0, 3.0, 0.0;
    spec.cluster_means.row(1) << 0.0, 3.0, 0.0, -3.0, 0.0;
    spec.cluster_weights = Eigen::VectorXd::Constant(2, 0.5);
    return spec;
}

void TransferSpec::validate() const {
    const auto d = noise_weights.cols();
    if (noise_weights.rows() < 1 || d < 1) {
        throw std::invalid_argument("TransferSpec: need at least one noise class and d >= 1");
    }
    if (cluster_means.rows() < 1 || cluster_means.cols() != d) {
        throw std::invalid_argument("TransferSpec: cluster means must be K x d with K >= 1");
    }
    if (cluster_weights.size() != cluster_means.rows() || (cluster_weights.array() <= 0.0).any() ||
        std::abs(cluster_weights.sum() - 1.0) > 1e-12) {
        throw std::invalid_argument("TransferSpec: cluster weights must be positive and sum to 1");
    }
    if (!noise_weights.allFinite() || !cluster_means.allFinite()) {
        throw std::invalid_argument("TransferSpec: generator parameters must be finite");
    }
    for (Eigen::Index a = 0; a < cluster_means.rows(); ++a) {
        for (Eigen::Index b = a + 1; b < cluster_means.rows(); ++b) {
            if ((cluster_means.row(a) - cluster_means.row(b)).norm() <= 1e-8) {
                throw std::invalid_argument("TransferSpec: clusters " + std::to_string(a + 1) + " and " +
                                            std::to_string(b + 1) + " coincide");
            }
        }
    }
    if (n_data <= cluster_means.rows() || noise_per_class < 1 || n_starts < 1) {
        throw std::invalid_argument("TransferSpec: need N > K, positive noise counts and starts");
    }
}

TransferData generate_transfer_data(const TransferSpec& spec) {
    spec.validate();
    const auto d = spec.noise_weights.cols();
    const auto num_k = spec.cluster_means.rows();
    std::normal_distribution<double> normal(0.0, 1.0);

    TransferData out;
    out.weights = spec.noise_weights;

    std::mt19937_64 data_rng(derive_seed(spec.seed, 0));
    std::discrete_distribution<int> pick(spec.cluster_weights.data(), spec.cluster_weights.data() + num_k);
    out.data.resize(spec.n_data, d);
    out.labels.resize(static_cast<std::size_t>(spec.n_data));
    for (int i = 0; i < spec.n_data; ++i) {
        const int k = pick(data_rng);
        out.labels[static_cast<std::size_t>(i)] = k;
        for (Eigen::Index j = 0; j < d; ++j) {
            out.data(i, j) = spec.cluster_means(k, j) + normal(data_rng);
        }
    }

    std::mt19937_64 noise_rng(derive_seed(spec.seed, 1));
    for (Eigen::Index l = 0; l < spec.noise_weights.rows(); ++l) {
        Eigen::MatrixXd block(spec.noise_per_class, d);
        for (int i = 0; i < spec.noise_per_class; ++i) {
            for (Eigen::Index j = 0; j < d; ++j) {
                block(i, j) = spec.noise_weights(l, j) + normal(noise_rng);
            }
        }
        out.noise.push_back(std::move(block));
    }
    return out;
}

MixtureModel transfer_truth(const TransferSpec& spec) {
    spec.validate();
    // With h = N(0, I) exp(-|w_1|^2 / 2): pi_k N(mu_k, I) = h exp(mu_k . x + c_k).
    const double w1 = spec.noise_weights.row(0).squaredNorm();
    std::vector<Component> comps;
    for (Eigen::Index k = 0; k < spec.cluster_means.rows(); ++k) {
        const Eigen::VectorXd mu = spec.cluster_means.row(k).transpose();
        comps.push_back({mu, std::log(spec.cluster_weights(k)) + 0.5 * w1 - 0.5 * mu.squaredNorm()});
    }
    return MixtureModel(comps, "linear");
}

TransferReport run_transfer_experiment(const TransferSpec& spec) {
    const TransferData gen = generate_transfer_data(spec);
    const DeepTransferProblem problem(gen.data, gen.noise, gen.weights);
    const int num_k = static_cast<int>(spec.cluster_means.rows());

    OptimizerConfig opt = spec.optimizer;
    opt.n_starts = spec.n_starts;
    opt.seed = derive_seed(spec.seed, 2);

    TransferReport report;
    report.fit = estimate_deep_transfer(problem, num_k, opt);
    const PosteriorMatrix post = posterior(report.fit.theta, report.fit.c, gen.data);
    report.cluster = make_cluster_report(post, gen.labels);

    if (spec.run_em) {
        EmConfig em;
        em.seed = derive_seed(spec.seed, 3);
        em.n_starts = spec.n_starts;
        report.em_fit = em_fit(gen.data, num_k, CovarianceType::diagonal, em);
        report.em_cluster = make_cluster_report(gmm_posterior(report.em_fit->params, gen.data), gen.labels);
    }
    return report;
}

}  // namespace nnmix
