#include "cli.hpp"

#include <cstdint>
#include <cstdlib>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nnmix/cluster.hpp"
#include "nnmix/em.hpp"
#include "nnmix/estimate.hpp"
#include "nnmix/harness.hpp"
#include "nnmix/io.hpp"
#include "nnmix/model.hpp"
#include "nnmix/nce.hpp"
#include "nnmix/parallel.hpp"

namespace nnmix::cli {

namespace {

using nlohmann::json;

constexpr const char* kToolVersion = "1.0.0";

// Bad input detected after parsing (paths, shapes, values): exit 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct OptimizerFlags {
    int max_iters = 2000;
    double grad_tol = 1e-6;
    double c1 = 1e-4;
    double c2 = 0.1;
};

void add_optimizer_flags(CLI::App* cmd, OptimizerFlags& f) {
    cmd->add_option("--max-iters", f.max_iters, "CG iterations per start")->check(CLI::PositiveNumber);
    cmd->add_option("--grad-tol", f.grad_tol, "Stop when max |gradient| / N falls below this")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--wolfe-c1", f.c1, "Sufficient-increase constant");
    cmd->add_option("--wolfe-c2", f.c2, "Curvature constant");
}

OptimizerConfig to_optimizer(const OptimizerFlags& f, int starts, std::uint64_t seed, int threads) {
    OptimizerConfig cfg;
    cfg.max_iters = f.max_iters;
    cfg.grad_tol = f.grad_tol;
    cfg.line_search.c1 = f.c1;
    cfg.line_search.c2 = f.c2;
    cfg.n_starts = starts;
    cfg.seed = seed;
    cfg.threads = threads;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

json optimizer_json(const OptimizerConfig& cfg) {
    return {{"max_iters", cfg.max_iters},   {"grad_tol", cfg.grad_tol},           {"wolfe_c1", cfg.line_search.c1},
            {"wolfe_c2", cfg.line_search.c2}, {"line_search_max_evals", cfg.line_search.max_evals},
            {"n_starts", cfg.n_starts},     {"seed", cfg.seed}};
}

// --threads, then NNMIX_THREADS, then every core.
int effective_threads(const CLI::Option* flag, int value) {
    if (flag->count() > 0) {
        return resolve_threads(value);
    }
    if (const char* env = std::getenv("NNMIX_THREADS"); env != nullptr && *env != '\0') {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 0 || v > 4096) {
            throw UsageError("NNMIX_THREADS must be a nonnegative integer");
        }
        return resolve_threads(static_cast<int>(v));
    }
    return resolve_threads(0);
}

json metadata(const std::string& command, json config, int threads) {
    return {{"tool", "nnmix"}, {"version", kToolVersion}, {"command", command}, {"threads", threads},
            {"config", std::move(config)}};
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw std::runtime_error("cannot create directory " + dir + ": " + ec.message());
    }
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

void write_json(const std::string& path, const json& j) {
    const std::filesystem::path parent = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) {
        std::filesystem::create_directories(parent, ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    out << j.dump(2) << '\n';
    if (!out.flush()) {
        throw std::runtime_error("write failed for " + path);
    }
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::setprecision(digits) << std::fixed << v;
    return s.str();
}

struct SimulateArgs {
    std::vector<int> sizes;
    int reps = 20;
    std::uint64_t seed = 0;
    std::vector<std::string> schemes{"nce", "mnce"};
    bool no_mle = false;
    std::string moments = "population";
    int starts = 5;
    int threads = 0;
    std::string out_dir = ".";
    OptimizerFlags opt;
    const CLI::Option* threads_flag = nullptr;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
    SimConfig cfg;
    cfg.sample_sizes = a.sizes;
    cfg.replicates = a.reps;
    cfg.seed = a.seed;
    cfg.include_mle = !a.no_mle;
    cfg.schemes.clear();
    json scheme_names = json::array();
    try {
        for (const auto& s : a.schemes) {
            cfg.schemes.push_back(parse_noise_scheme(s));
            scheme_names.push_back(to_string(cfg.schemes.back()));
        }
        cfg.moments = parse_moment_source(a.moments);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const int threads = effective_threads(a.threads_flag, a.threads);
    cfg.threads = threads;
    cfg.optimizer = to_optimizer(a.opt, a.starts, a.seed, 1);
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const std::vector<SimResultRow> rows = run_simulation(cfg);
    const std::vector<MedianRow> medians = summarize_medians(rows);
    const std::vector<SlopeRow> slopes = consistency_slopes(medians);

    ensure_dir(a.out_dir);
    write_rows_csv(join_path(a.out_dir, "rows.csv"), rows);
    write_medians_csv(join_path(a.out_dir, "medians.csv"), medians);

    json config = {{"sizes", cfg.sample_sizes},
                   {"reps", cfg.replicates},
                   {"seed", cfg.seed},
                   {"schemes", scheme_names},
                   {"include_mle", cfg.include_mle},
                   {"noise_moments", to_string(cfg.moments)},
                   {"optimizer", optimizer_json(cfg.optimizer)},
                   {"em", {{"max_iters", cfg.em.max_iters}, {"loglik_tol", cfg.em.loglik_tol},
                           {"variance_floor", cfg.em.variance_floor}}}};
    json summary = json::array();
    for (const auto& s : slopes) {
        summary.push_back({{"method", s.method},
                           {"slope_theta", std::isfinite(s.slope_theta) ? json(s.slope_theta) : json(nullptr)},
                           {"slope_c", std::isfinite(s.slope_c) ? json(s.slope_c) : json(nullptr)},
                           {"points", s.points}});
    }
    json excluded = json::array();
    for (const auto& m : medians) {
        if (m.excluded > 0) {
            excluded.push_back({{"N", m.n}, {"method", m.method}, {"non_converged", m.excluded}});
        }
    }
    write_json(join_path(a.out_dir, "run.json"),
               {{"metadata", metadata("simulate-gmm", config, threads)}, {"slopes", summary}, {"excluded", excluded}});

    out << "method  slope_theta  slope_c  (log2 median error vs log2 N)\n";
    for (const auto& s : slopes) {
        out << s.method << "  " << fixed(s.slope_theta, 4) << "  " << fixed(s.slope_c, 4) << '\n';
    }
    for (const auto& m : medians) {
        if (m.excluded > 0) {
            out << "excluded " << m.excluded << " non-converged replicate(s) at N=" << m.n << " method=" << m.method
                << '\n';
        }
    }
    return kExitOk;
}

struct ClusterArgs {
    std::string features;
    std::vector<std::string> noise;
    std::string weights;
    std::string counts;
    int clusters = 2;
    int starts = 10;
    std::uint64_t seed = 0;
    int threads = 0;
    std::string out;
    OptimizerFlags opt;
    const CLI::Option* threads_flag = nullptr;
};

int cmd_cluster(const ClusterArgs& a, std::ostream& out) {
    if (a.clusters < 1 || a.clusters > 8) {
        throw UsageError("--clusters must be between 1 and 8");
    }
    const int threads = effective_threads(a.threads_flag, a.threads);
    const OptimizerConfig opt = to_optimizer(a.opt, a.starts, a.seed, threads);
    const std::optional<std::string> counts = a.counts.empty() ? std::nullopt : std::optional(a.counts);
    const TransferBundle bundle = load_transfer_bundle(a.features, a.noise, a.weights, counts);
    if (bundle.data.values.rows() <= a.clusters) {
        throw UsageError("need more data rows than clusters");
    }
    std::unique_ptr<DeepTransferProblem> problem;
    try {
        problem = std::make_unique<DeepTransferProblem>(bundle.data.values, bundle.noise, bundle.weights);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const EstimationResult fit = estimate_deep_transfer(*problem, a.clusters, opt);
    ResultsDocument doc = make_results("deep_mnce", fit);
    attach_clustering(doc, posterior(fit.theta, fit.c, bundle.data.values), bundle.data.labels);
    json noise_paths = a.noise;
    doc.metadata = metadata("cluster-features",
                            {{"features", a.features},
                             {"noise", noise_paths},
                             {"weights", a.weights},
                             {"counts", a.counts.empty() ? json(nullptr) : json(a.counts)},
                             {"clusters", a.clusters},
                             {"optimizer", optimizer_json(opt)}},
                            threads);
    write_results(a.out, doc);

    out << "objective " << format_double(fit.objective) << (fit.converged ? "" : " (not converged)") << '\n';
    if (doc.alignment) {
        out << "accuracy " << fixed(doc.alignment->accuracy, 6) << '\n';
    }
    return kExitOk;
}

struct EmArgs {
    std::string features;
    int clusters = 2;
    std::string cov = "diagonal";
    int starts = 10;
    std::uint64_t seed = 0;
    int max_iters = 1000;
    double tol = 1e-10;
    double variance_floor = 1e-6;
    int threads = 0;
    std::string out;
    const CLI::Option* threads_flag = nullptr;
};

int cmd_em(const EmArgs& a, std::ostream& out) {
    CovarianceType cov;
    try {
        cov = parse_covariance_type(a.cov);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const int threads = effective_threads(a.threads_flag, a.threads);
    const FeatureTable table = read_features(a.features);
    if (table.values.rows() <= a.clusters) {
        throw UsageError("N = " + std::to_string(table.values.rows()) + " must exceed K = " +
                         std::to_string(a.clusters));
    }
    if (a.clusters < 1 || a.clusters > 8) {
        throw UsageError("--clusters must be between 1 and 8");
    }
    EmConfig cfg;
    cfg.max_iters = a.max_iters;
    cfg.loglik_tol = a.tol;
    cfg.variance_floor = a.variance_floor;
    cfg.n_starts = a.starts;
    cfg.seed = a.seed;

    const EmResult fit = em_fit(table.values, a.clusters, cov, cfg);
    ResultsDocument doc;
    doc.method = std::string("em-") + to_string(cov);
    if (fit.params.dim() == 1) {
        const MixtureModel natural = gmm_to_natural(fit.params);
        doc.theta = natural.theta();
        doc.c = natural.c();
    }
    doc.objective = fit.loglik;
    doc.converged = fit.converged;
    doc.best_start = fit.best_start;
    for (double ll : fit.per_start_loglik) {
        doc.starts.push_back({ll, std::isfinite(ll), !std::isfinite(ll), 0, std::isfinite(ll) ? "finished" : "failed"});
    }
    doc.gmm = fit.params;
    attach_clustering(doc, gmm_posterior(fit.params, table.values), table.labels);
    doc.metadata = metadata("em-baseline",
                            {{"features", a.features},
                             {"clusters", a.clusters},
                             {"cov", to_string(cov)},
                             {"n_starts", cfg.n_starts},
                             {"seed", cfg.seed},
                             {"max_iters", cfg.max_iters},
                             {"loglik_tol", cfg.loglik_tol},
                             {"variance_floor", cfg.variance_floor}},
                            threads);
    write_results(a.out, doc);

    out << "loglik " << format_double(fit.loglik) << (fit.converged ? "" : " (not converged)") << '\n';
    if (doc.alignment) {
        out << "accuracy " << fixed(doc.alignment->accuracy, 6) << '\n';
    }
    return kExitOk;
}

struct SyntheticArgs {
    std::string out_dir;
    std::uint64_t seed = 0;
    int n = 2000;
    int noise_per_class = 2000;
    int starts = 10;
    int threads = 0;
    OptimizerFlags opt;
    const CLI::Option* threads_flag = nullptr;
};

TransferSpec synthetic_spec(const SyntheticArgs& a, int threads) {
    TransferSpec spec = TransferSpec::standard();
    spec.seed = a.seed;
    spec.n_data = a.n;
    spec.noise_per_class = a.noise_per_class;
    spec.n_starts = a.starts;
    spec.optimizer = to_optimizer(a.opt, a.starts, a.seed, threads);
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return spec;
}

json spec_json(const TransferSpec& spec) {
    json w = json::array();
    for (Eigen::Index l = 0; l < spec.noise_weights.rows(); ++l) {
        w.push_back(std::vector<double>(spec.noise_weights.row(l).begin(), spec.noise_weights.row(l).end()));
    }
    json mu = json::array();
    for (Eigen::Index k = 0; k < spec.cluster_means.rows(); ++k) {
        mu.push_back(std::vector<double>(spec.cluster_means.row(k).begin(), spec.cluster_means.row(k).end()));
    }
    return {{"noise_weights", w},
            {"cluster_means", mu},
            {"cluster_weights", std::vector<double>(spec.cluster_weights.begin(), spec.cluster_weights.end())},
            {"n_data", spec.n_data},
            {"noise_per_class", spec.noise_per_class},
            {"seed", spec.seed}};
}

int cmd_make_synthetic(const SyntheticArgs& a, std::ostream& out) {
    const TransferSpec spec = synthetic_spec(a, 1);
    const TransferData gen = generate_transfer_data(spec);
    ensure_dir(a.out_dir);
    write_features(join_path(a.out_dir, "data.csv"), gen.data, gen.labels);
    std::vector<std::int64_t> counts;
    for (std::size_t l = 0; l < gen.noise.size(); ++l) {
        write_features(join_path(a.out_dir, "noise_" + std::to_string(l + 1) + ".csv"), gen.noise[l]);
        counts.push_back(gen.noise[l].rows());
    }
    write_weights(join_path(a.out_dir, "weights.csv"), gen.weights);
    write_counts(join_path(a.out_dir, "counts.csv"), counts);
    write_json(join_path(a.out_dir, "generator.json"),
               {{"metadata", metadata("make-synthetic", spec_json(spec), 1)}});
    out << "wrote " << gen.data.rows() << " data rows and " << gen.noise.size() << " noise classes to " << a.out_dir
        << '\n';
    return kExitOk;
}

int cmd_transfer(const SyntheticArgs& a, const std::string& out_path, std::ostream& out) {
    const int threads = effective_threads(a.threads_flag, a.threads);
    const TransferSpec spec = synthetic_spec(a, threads);
    const TransferReport report = run_transfer_experiment(spec);
    const TransferData gen = generate_transfer_data(spec);

    ResultsDocument doc = make_results("deep_mnce", report.fit);
    attach_clustering(doc, posterior(report.fit.theta, report.fit.c, gen.data), gen.labels);
    json cfg = spec_json(spec);
    cfg["optimizer"] = optimizer_json(spec.optimizer);
    doc.metadata = metadata("transfer-experiment", cfg, threads);
    if (report.em_cluster && report.em_cluster->alignment) {
        doc.metadata["em_baseline"] = {{"covariance", "diagonal"},
                                       {"accuracy", report.em_cluster->alignment->accuracy},
                                       {"loglik", report.em_fit->loglik}};
    }
    write_results(out_path, doc);
    out << "deep_mnce accuracy " << fixed(report.cluster.alignment->accuracy, 6) << '\n';
    if (report.em_cluster) {
        out << "em accuracy " << fixed(report.em_cluster->alignment->accuracy, 6) << '\n';
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mixture estimation for non-normalized models by noise contrastive estimation", "nnmix"};
    app.set_config("--config", "", "TOML/INI file with option defaults; flags take precedence");
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate-gmm", "Consistency simulation on 0.5 N(0,1) + 0.5 N(4,1)");
    sim_cmd->add_option("--sizes", sim.sizes, "Comma-separated ascending sample sizes")
        ->required()
        ->delimiter(',');
    sim_cmd->add_option("--reps", sim.reps, "Replicates per sample size")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--seed", sim.seed, "Master seed");
    sim_cmd->add_option("--schemes", sim.schemes, "Noise schemes: nce (single), mnce (two)")->delimiter(',');
    sim_cmd->add_flag("--no-mle", sim.no_mle, "Skip the EM maximum-likelihood baseline");
    sim_cmd->add_option("--noise-moments", sim.moments, "population (N(2,5)) or sample moments");
    sim_cmd->add_option("--starts", sim.starts, "Random starts per fit")->check(CLI::PositiveNumber);
    sim.threads_flag = sim_cmd->add_option("--threads", sim.threads, "Worker threads (0 = all cores)");
    sim_cmd->add_option("--out-dir", sim.out_dir, "Directory for rows.csv, medians.csv and run.json");
    add_optimizer_flags(sim_cmd, sim.opt);

    ClusterArgs clu;
    auto* clu_cmd = app.add_subcommand("cluster-features", "Deep-transfer clustering of feature vectors");
    clu_cmd->add_option("--features", clu.features, "Feature file of the data to cluster")->required();
    clu_cmd->add_option("--noise", clu.noise, "Feature file per pretraining class, in weight-row order")
        ->required()
        ->delimiter(',');
    clu_cmd->add_option("--weights", clu.weights, "Last-layer weights (L x d)")->required();
    clu_cmd->add_option("--counts", clu.counts, "Optional counts file checked against the noise files");
    clu_cmd->add_option("-K,--clusters", clu.clusters, "Number of clusters");
    clu_cmd->add_option("--starts", clu.starts, "Random starts")->check(CLI::PositiveNumber);
    clu_cmd->add_option("--seed", clu.seed, "Seed for the start points");
    clu.threads_flag = clu_cmd->add_option("--threads", clu.threads, "Worker threads (0 = all cores)");
    clu_cmd->add_option("--out", clu.out, "Results JSON path")->required();
    add_optimizer_flags(clu_cmd, clu.opt);

    EmArgs em;
    auto* em_cmd = app.add_subcommand("em-baseline", "Gaussian mixture fit by EM");
    em_cmd->add_option("--features", em.features, "Feature file")->required();
    em_cmd->add_option("-K,--clusters", em.clusters, "Number of components");
    em_cmd->add_option("--cov", em.cov, "diagonal or isotropic");
    em_cmd->add_option("--starts", em.starts, "k-means++ restarts")->check(CLI::PositiveNumber);
    em_cmd->add_option("--seed", em.seed, "Seed for initialization");
    em_cmd->add_option("--max-iters", em.max_iters, "EM iterations per start")->check(CLI::PositiveNumber);
    em_cmd->add_option("--tol", em.tol, "Relative log-likelihood tolerance")->check(CLI::PositiveNumber);
    em_cmd->add_option("--variance-floor", em.variance_floor, "Lower bound on variances")
        ->check(CLI::PositiveNumber);
    em.threads_flag = em_cmd->add_option("--threads", em.threads, "Worker threads (0 = all cores)");
    em_cmd->add_option("--out", em.out, "Results JSON path")->required();

    SyntheticArgs syn;
    auto* syn_cmd = app.add_subcommand("make-synthetic", "Write a synthetic deep-transfer bundle");
    syn_cmd->add_option("--out-dir", syn.out_dir, "Output directory")->required();
    syn_cmd->add_option("--seed", syn.seed, "Generator seed");
    syn_cmd->add_option("--n", syn.n, "Data rows")->check(CLI::PositiveNumber);
    syn_cmd->add_option("--noise-per-class", syn.noise_per_class, "Rows per noise class")
        ->check(CLI::PositiveNumber);

    SyntheticArgs trn;
    std::string trn_out;
    auto* trn_cmd = app.add_subcommand("transfer-experiment", "Generate, cluster and score the synthetic bundle");
    trn_cmd->add_option("--seed", trn.seed, "Generator and start seed");
    trn_cmd->add_option("--n", trn.n, "Data rows")->check(CLI::PositiveNumber);
    trn_cmd->add_option("--noise-per-class", trn.noise_per_class, "Rows per noise class")
        ->check(CLI::PositiveNumber);
    trn_cmd->add_option("--starts", trn.starts, "Random starts")->check(CLI::PositiveNumber);
    trn.threads_flag = trn_cmd->add_option("--threads", trn.threads, "Worker threads (0 = all cores)");
    trn_cmd->add_option("--out", trn_out, "Report JSON path")->required();
    add_optimizer_flags(trn_cmd, trn.opt);

    std::vector<std::string> argv_store{"nnmix"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : argv_store) {
        argv.push_back(s.c_str());
    }

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (sim_cmd->parsed()) {
            return cmd_simulate(sim, out);
        }
        if (clu_cmd->parsed()) {
            return cmd_cluster(clu, out);
        }
        if (em_cmd->parsed()) {
            return cmd_em(em, out);
        }
        if (syn_cmd->parsed()) {
            return cmd_make_synthetic(syn, out);
        }
        return cmd_transfer(trn, trn_out, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DimensionError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const OptimizationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace nnmix::cli
