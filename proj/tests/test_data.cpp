#include "isodrl/csv.hpp"
#include "isodrl/data.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace isodrl;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = std::filesystem::temp_directory_path() /
                ("isodrl_test_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" +
                 ::testing::UnitTest::GetInstance()->current_test_info()->name());
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string write(const std::string& name, const std::string& content) const {
        const auto p = path_ / name;
        std::ofstream(p) << content;
        return p.string();
    }

private:
    std::filesystem::path path_;
};

std::string wine_header() {
    return "\"fixed acidity\";\"volatile acidity\";\"citric acid\";\"residual sugar\";\"chlorides\";"
           "\"free sulfur dioxide\";\"total sulfur dioxide\";\"density\";\"pH\";\"sulphates\";\"alcohol\";"
           "\"quality\"\n";
}

} // namespace

TEST(Csv, ReadsCommaAndSemicolon) {
    TempDir dir;
    const auto comma = read_numeric_csv(dir.write("a.csv", "x,y\n1,2\n3,4\n"));
    EXPECT_EQ(comma.header, (std::vector<std::string>{"x", "y"}));
    EXPECT_EQ(comma.column_values(comma.column("y")), (std::vector<double>{2, 4}));
    const auto semi = read_numeric_csv(dir.write("b.csv", "\"x\";\"y\"\n1.5;-2e3\n"));
    EXPECT_EQ(semi.header, (std::vector<std::string>{"x", "y"}));
    EXPECT_EQ(semi.rows[0], (std::vector<double>{1.5, -2000}));
}

TEST(Csv, DiagnosticsNameLineAndColumn) {
    TempDir dir;
    try {
        read_numeric_csv(dir.write("bad.csv", "x,y\n1,2\n3,abc\n"));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("'y'"), std::string::npos) << e.what();
    }
    try {
        read_numeric_csv(dir.write("short.csv", "x,y\n1\n"));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::schema_error);
    }
    try {
        read_numeric_csv(dir.write("none.csv", "") + ".missing");
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io_error);
    }
}

TEST(Csv, SingleColumnAndRoundTrip) {
    TempDir dir;
    std::ostringstream out;
    write_numeric_csv(out, {"risk"}, {{0.1, 1.0 / 3.0, 2.0}});
    const auto values = read_column(dir.write("r.csv", out.str()));
    EXPECT_EQ(values, (std::vector<double>{0.1, 1.0 / 3.0, 2.0}));
    EXPECT_THROW(read_column(dir.write("two.csv", "a,b\n1,2\n")), Error);
    EXPECT_EQ(read_column(dir.write("two2.csv", "a,b\n1,2\n"), "b"), (std::vector<double>{2}));
}

TEST(Synthetic, DefaultsAndShapes) {
    SyntheticConfig cfg;
    const auto data = generate_synthetic(cfg, 1);
    EXPECT_EQ(data.train.size(), 1000u);
    EXPECT_EQ(data.test.size(), 500u);
    EXPECT_EQ(data.train.dim(), 5);
    EXPECT_NEAR(cfg.coefficients()[0], 1.0 / std::sqrt(5.0), 1e-15);
    EXPECT_NEAR(cfg.mean().squaredNorm(), 4.0, 1e-12);
}

TEST(Synthetic, TargetMeanMatches) {
    SyntheticConfig cfg;
    const auto data = generate_synthetic(cfg, 2);
    const Eigen::VectorXd mean = data.test.X.colwise().mean();
    for (Eigen::Index k = 0; k < mean.size(); ++k)
        EXPECT_NEAR(mean[k], cfg.mean()[k], 4.0 / std::sqrt(static_cast<double>(cfg.M)));
}

TEST(Synthetic, CorrelatedTargetCovariance) {
    SyntheticConfig cfg;
    cfg.zeta = 1.0;
    cfg.M = 20000;
    const auto data = generate_synthetic(cfg, 3);
    const Eigen::MatrixXd centered = data.test.X.rowwise() - data.test.X.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(cfg.M - 1);
    EXPECT_NEAR(cov(0, 0), 2.0, 0.1);
    EXPECT_NEAR(cov(0, 1), 1.0, 0.1);
}

TEST(Synthetic, ConditionalLawIsShared) {
    // Residuals around the regression function are N(0, 1) in both samples.
    SyntheticConfig cfg;
    cfg.N = 20000;
    cfg.M = 20000;
    const auto data = generate_synthetic(cfg, 4);
    const auto beta = cfg.coefficients();
    for (const auto* s : {&data.train, &data.test}) {
        double sum = 0, sq = 0;
        for (Eigen::Index i = 0; i < s->X.rows(); ++i) {
            const double e = s->y[i] - synthetic_regression(s->X.row(i), beta);
            sum += e;
            sq += e * e;
        }
        const double n = static_cast<double>(s->X.rows());
        EXPECT_NEAR(sum / n, 0.0, 0.03);
        EXPECT_NEAR(sq / n, 1.0, 0.05);
    }
}

TEST(Synthetic, Reproducible) {
    SyntheticConfig cfg;
    const auto a = generate_synthetic(cfg, 5);
    const auto b = generate_synthetic(cfg, 5);
    EXPECT_EQ(a.train.X, b.train.X);
    EXPECT_EQ(a.test.y, b.test.y);
    EXPECT_NE(a.train.X, generate_synthetic(cfg, 6).train.X);
}

TEST(Synthetic, RejectsSingularCovariance) {
    SyntheticConfig cfg;
    cfg.zeta = -0.2; // -1/d for d = 5
    EXPECT_THROW(generate_synthetic(cfg, 1), Error);
}

TEST(GaussianRatio, MatchesClosedFormAndIntegratesToOne) {
    SyntheticConfig cfg;
    cfg.d = 1;
    cfg.mu = Eigen::VectorXd::Constant(1, 1.0);
    const GaussianShiftRatio ratio(cfg);
    Eigen::RowVectorXd x(1);
    x << 0.7;
    EXPECT_NEAR(ratio.log_ratio(x), 0.7 - 0.5, 1e-12);
    // E_P[w] = 1 by Monte Carlo.
    Philox rng(1);
    double acc = 0;
    for (int i = 0; i < 200000; ++i) {
        x << rng.normal();
        acc += ratio(x);
    }
    EXPECT_NEAR(acc / 200000, 1.0, 0.02);
}

TEST(Partition, SizesAndDeterminism) {
    SyntheticConfig cfg;
    cfg.N = 20000;
    cfg.M = 1000;
    const auto data = generate_synthetic(cfg, 7);
    const auto p = partition(data.train, data.test, 0.5, 11);
    const double four_sqrt_n = 4 * std::sqrt(20000.0);
    EXPECT_NEAR(static_cast<double>(p.d1.size()), 10000, four_sqrt_n);
    EXPECT_NEAR(static_cast<double>(p.d2.size()), 5000, four_sqrt_n);
    EXPECT_NEAR(static_cast<double>(p.d3.size()), 5000, four_sqrt_n);
    EXPECT_EQ(p.d1.size() + p.d2.size() + p.d3.size(), 20000u);
    EXPECT_EQ(p.test0.size() + p.test1.size(), 1000u);
    const auto q = partition(data.train, data.test, 0.5, 11);
    EXPECT_EQ(p.d1.X, q.d1.X);
    EXPECT_EQ(p.test1.y, q.test1.y);
}

TEST(Partition, DegenerateSplitFails) {
    SyntheticConfig cfg;
    cfg.N = 10;
    cfg.M = 10;
    const auto data = generate_synthetic(cfg, 8);
    EXPECT_THROW(partition(data.train, data.test, 1e-6, 1), Error);
    EXPECT_THROW(partition(data.train, data.test, 0.0, 1), Error);
}

TEST(Wine, LoadsAndScales) {
    TempDir dir;
    const std::string row_w = "7;0.27;0.36;20.7;0.045;45;170;1.001;3;0.45;8.8;6\n";
    const std::string row_r = "14;0.7;0;1.9;0.076;11;34;0.9978;3.51;0.56;9.4;5\n";
    const auto white = dir.write("white.csv", wine_header() + row_w + row_w);
    const auto red = dir.write("red.csv", wine_header() + row_r);
    const auto data = load_wine(white, red);
    EXPECT_EQ(data.train.size(), 2u);
    EXPECT_EQ(data.test.size(), 1u);
    EXPECT_EQ(data.train.dim(), 11);
    EXPECT_DOUBLE_EQ(data.train.X(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(data.test.X(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(data.train.y[0], 1.0);
    EXPECT_NEAR(data.test.y[0], 5.0 / 6.0, 1e-15);
    const auto again = load_wine(white, red);
    EXPECT_EQ(again.train.X, data.train.X);
}

TEST(Wine, SchemaErrors) {
    TempDir dir;
    const auto good = dir.write("good.csv", wine_header() + "7;0.27;0.36;20.7;0.045;45;170;1.001;3;0.45;8.8;6\n");
    const auto narrow = dir.write("narrow.csv", "a;b\n1;2\n");
    try {
        load_wine(good, narrow);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::schema_error);
    }
    try {
        load_wine(good, dir.write("x", "") + ".absent");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::io_error);
    }
}
