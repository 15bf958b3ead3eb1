#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cli.hpp"
#include "nnmix/io.hpp"

namespace fs = std::filesystem;
using namespace nnmix;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / ("nnmix_cli_" + std::string(info->name()) + "_" +
                                            std::to_string(std::random_device{}()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    int run(const std::vector<std::string>& args) {
        out_.str("");
        err_.str("");
        return cli::run(args, out_, err_);
    }

    static std::string slurp(const std::string& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    static int count_lines(const std::string& p) {
        std::ifstream in(p);
        std::string line;
        int n = 0;
        while (std::getline(in, line)) {
            ++n;
        }
        return n;
    }

    void make_bundle(const std::string& sub) {
        ASSERT_EQ(run({"make-synthetic", "--out-dir", path(sub), "--seed", "4", "--n", "600", "--noise-per-class",
                       "600"}),
                  cli::kExitOk)
            << err_.str();
    }

    std::vector<std::string> bundle_args(const std::string& sub) const {
        const std::string d = path(sub);
        return {"--features", d + "/data.csv",
                "--noise",    d + "/noise_1.csv," + d + "/noise_2.csv," + d + "/noise_3.csv",
                "--weights",  d + "/weights.csv"};
    }

    fs::path dir_;
    std::ostringstream out_;
    std::ostringstream err_;
};

}  // namespace

TEST_F(CliTest, SimulateWritesExpectedShapes) {
    ASSERT_EQ(run({"simulate-gmm", "--sizes", "512,1024", "--reps", "2", "--seed", "7", "--threads", "2",
                   "--out-dir", path("a")}),
              cli::kExitOk)
        << err_.str();
    EXPECT_EQ(count_lines(path("a/rows.csv")), 1 + 2 * 2 * 3);
    EXPECT_EQ(count_lines(path("a/medians.csv")), 1 + 2 * 3);
    const auto run_json = nlohmann::json::parse(slurp(path("a/run.json")));
    EXPECT_TRUE(run_json.contains("metadata"));
    EXPECT_TRUE(run_json.contains("slopes"));

    ASSERT_EQ(run({"simulate-gmm", "--sizes", "512,1024", "--reps", "2", "--seed", "7", "--threads", "1",
                   "--out-dir", path("b")}),
              cli::kExitOk);
    EXPECT_EQ(slurp(path("a/rows.csv")), slurp(path("b/rows.csv")));
    EXPECT_EQ(slurp(path("a/medians.csv")), slurp(path("b/medians.csv")));
}

TEST_F(CliTest, UsageErrorsExitWithTwo) {
    EXPECT_EQ(run({"simulate-gmm", "--reps", "2"}), cli::kExitUsage);
    EXPECT_EQ(run({"simulate-gmm", "--sizes", "1024,512", "--out-dir", path("x")}), cli::kExitUsage);
    EXPECT_EQ(run({"simulate-gmm", "--sizes", "512", "--schemes", "bogus", "--out-dir", path("x")}),
              cli::kExitUsage);
    EXPECT_EQ(run({}), cli::kExitUsage);
    EXPECT_EQ(run({"no-such-command"}), cli::kExitUsage);
    EXPECT_EQ(run({"--version"}), cli::kExitOk);
    EXPECT_NE(out_.str().find("1.0.0"), std::string::npos);
}

TEST_F(CliTest, ClusterFeaturesOnSyntheticBundle) {
    make_bundle("bundle");
    auto args = bundle_args("bundle");
    args.insert(args.begin(), "cluster-features");
    args.insert(args.end(), {"--counts", path("bundle/counts.csv"), "-K", "2", "--starts", "4", "--seed", "3",
                             "--out", path("new/dir/fit.json")});
    ASSERT_EQ(run(args), cli::kExitOk) << err_.str();
    const ResultsDocument doc = read_results(path("new/dir/fit.json"));
    EXPECT_EQ(doc.method, "deep_mnce");
    EXPECT_EQ(doc.theta.rows(), 2);
    EXPECT_EQ(doc.theta.cols(), 5);
    EXPECT_EQ(doc.assignments.size(), 600u);
    ASSERT_TRUE(doc.alignment.has_value());
    EXPECT_GE(doc.alignment->accuracy, 0.95);
    EXPECT_EQ(doc.starts.size(), 4u);
    EXPECT_EQ(doc.metadata["tool"], "nnmix");
}

TEST_F(CliTest, ClusterFeaturesSingleCluster) {
    make_bundle("bundle");
    auto args = bundle_args("bundle");
    args.insert(args.begin(), "cluster-features");
    args.insert(args.end(), {"-K", "1", "--starts", "2", "--out", path("k1.json")});
    ASSERT_EQ(run(args), cli::kExitOk) << err_.str();
    const ResultsDocument doc = read_results(path("k1.json"));
    EXPECT_EQ(doc.theta.rows(), 1);
    EXPECT_EQ(doc.logit_scores.cols(), 0);
    EXPECT_EQ(doc.posterior_summary.min, 1.0);
}

TEST_F(CliTest, ClusterFeaturesRejectsBadInputs) {
    make_bundle("bundle");
    auto base = bundle_args("bundle");
    base.insert(base.begin(), "cluster-features");

    {
        std::ofstream(path("bundle/weights.csv")) << "# d=5 n=3\n1,2,3,4,5\n1,2,nan,4,5\n1,2,3,4,5\n";
        auto args = base;
        args.insert(args.end(), {"--out", path("x.json")});
        EXPECT_EQ(run(args), cli::kExitUsage);
        EXPECT_NE(err_.str().find("weights.csv:3"), std::string::npos) << err_.str();
        EXPECT_FALSE(fs::exists(path("x.json")));
    }
    {
        write_weights(path("bundle/weights.csv"), Eigen::MatrixXd::Ones(2, 5));
        auto args = base;
        args.insert(args.end(), {"--out", path("x.json")});
        EXPECT_EQ(run(args), cli::kExitUsage);
    }
    {
        write_weights(path("bundle/weights.csv"), Eigen::MatrixXd::Ones(3, 5));
        auto args = base;
        args.insert(args.end(), {"-K", "700", "--out", path("x.json")});
        EXPECT_EQ(run(args), cli::kExitUsage);
    }
    {
        auto args = base;
        args.insert(args.end(), {"--counts", path("missing.csv"), "--out", path("x.json")});
        EXPECT_EQ(run(args), cli::kExitUsage);
    }
}

TEST_F(CliTest, EmBaselineCovarianceTypes) {
    make_bundle("bundle");
    const std::string data = path("bundle/data.csv");
    ASSERT_EQ(run({"em-baseline", "--features", data, "-K", "2", "--cov", "diagonal", "--starts", "3", "--out",
                   path("diag.json")}),
              cli::kExitOk)
        << err_.str();
    ASSERT_EQ(run({"em-baseline", "--features", data, "-K", "2", "--cov", "isotropic", "--starts", "3", "--out",
                   path("iso.json")}),
              cli::kExitOk);
    const ResultsDocument diag = read_results(path("diag.json"));
    const ResultsDocument iso = read_results(path("iso.json"));
    EXPECT_EQ(diag.method, "em-diagonal");
    EXPECT_EQ(iso.method, "em-isotropic");
    ASSERT_TRUE(iso.gmm.has_value());
    for (int k = 0; k < 2; ++k) {
        EXPECT_EQ(iso.gmm->variances.row(k).minCoeff(), iso.gmm->variances.row(k).maxCoeff());
    }
    EXPECT_EQ(diag.theta.size(), 0);
    ASSERT_TRUE(diag.alignment.has_value());
    EXPECT_GE(diag.alignment->accuracy, 0.95);

    EXPECT_EQ(run({"em-baseline", "--features", data, "-K", "600", "--out", path("bad.json")}), cli::kExitUsage);
    EXPECT_EQ(run({"em-baseline", "--features", data, "--cov", "full", "--out", path("bad.json")}), cli::kExitUsage);
}

TEST_F(CliTest, EmBaselineOneDimensionFillsNaturalParameters) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> z;
    Eigen::MatrixXd x(300, 1);
    for (int i = 0; i < 300; ++i) {
        x(i, 0) = (i % 2 ? 4.0 : 0.0) + z(rng);
    }
    write_features(path("x.csv"), x);
    ASSERT_EQ(run({"em-baseline", "--features", path("x.csv"), "-K", "2", "--out", path("e.json")}), cli::kExitOk)
        << err_.str();
    const ResultsDocument doc = read_results(path("e.json"));
    EXPECT_EQ(doc.theta.rows(), 2);
    EXPECT_EQ(doc.theta.cols(), 2);
    EXPECT_FALSE(doc.alignment.has_value());
}

TEST_F(CliTest, TransferExperimentReport) {
    ASSERT_EQ(run({"transfer-experiment", "--n", "400", "--noise-per-class", "400", "--starts", "3", "--seed", "1",
                   "--out", path("t.json")}),
              cli::kExitOk)
        << err_.str();
    const ResultsDocument doc = read_results(path("t.json"));
    ASSERT_TRUE(doc.alignment.has_value());
    EXPECT_GE(doc.alignment->accuracy, 0.95);
}
