#include <lowrank/data.hpp>
#include <lowrank/operators.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

using namespace lowrank;

namespace {

std::vector<LinearMap> probe_operators(std::mt19937_64 &rng) {
    std::vector<LinearMap> ops;
    ops.push_back(random_sampling_mask(7, 5, 0.4, rng));
    ops.push_back(random_partial_dct(7, 5, 0.4, rng));
    ops.push_back(random_partial_dct(6, 9, 0.7, rng, true));
    ops.push_back(random_sampling_mask(4, 4, 1.0, rng));
    return ops;
}

// Direct double sum for one coefficient of the orthonormal 2-D DCT-II.
double dct_coefficient(const Matrix &X, Index u, Index v) {
    const Index m = X.rows(), n = X.cols();
    const double pi = std::numbers::pi;
    const double au = u == 0 ? std::sqrt(1.0 / m) : std::sqrt(2.0 / m);
    const double av = v == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    double sum = 0.0;
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j)
            sum += X(i, j) * std::cos(pi * (2 * i + 1) * u / (2.0 * m)) * std::cos(pi * (2 * j + 1) * v / (2.0 * n));
    return au * av * sum;
}

} // namespace

TEST(SamplingMaskTest, FullObservationIsRowOrderedVectorisation) {
    std::vector<Entry> all;
    for (Index i = 0; i < 2; ++i)
        for (Index j = 0; j < 3; ++j)
            all.push_back({i, j});
    const LinearMap A = LinearMap::sampling(2, 3, all);
    Matrix X(2, 3);
    X << 1, 2, 3, 4, 5, 6;
    Vector expected(6);
    expected << 1, 2, 3, 4, 5, 6;
    EXPECT_EQ(A.apply(X), expected);
}

TEST(SamplingMaskTest, AdjointScatters) {
    const LinearMap A = LinearMap::sampling(2, 2, {{0, 0}});
    Vector y(1);
    y << 5;
    Matrix expected(2, 2);
    expected << 5, 0, 0, 0;
    EXPECT_EQ(A.adjoint(y), expected);
}

TEST(SamplingMaskTest, RejectsBadIndices) {
    EXPECT_THROW(LinearMap::sampling(2, 2, {{0, 0}, {0, 0}}), ArgumentError);
    EXPECT_THROW(LinearMap::sampling(2, 2, {{2, 0}}), ArgumentError);
    EXPECT_THROW(LinearMap::sampling(2, 2, {}), ArgumentError);
}

TEST(PartialDct, MatchesDirectCoefficientSum) {
    std::mt19937_64 rng(11);
    const LinearMap A = random_partial_dct(5, 4, 0.5, rng);
    const Matrix X = Matrix::Random(5, 4);
    const Vector y = A.apply(X);
    const auto &kept = A.dct()->kept();
    for (std::size_t i = 0; i < kept.size(); ++i)
        EXPECT_NEAR(y(static_cast<Index>(i)), dct_coefficient(X, kept[i] / 4, kept[i] % 4), 1e-12);
}

TEST(PartialDct, ZeroMapsToZero) {
    std::mt19937_64 rng(12);
    const LinearMap A = random_partial_dct(6, 6, 0.3, rng);
    EXPECT_TRUE(A.apply(Matrix::Zero(6, 6)).isZero());
}

TEST(PartialDct, AllFrequenciesPreserveNorm) {
    std::vector<Index> all(7 * 5);
    std::iota(all.begin(), all.end(), Index{0});
    const LinearMap A = LinearMap::partial_dct(7, 5, all);
    const Matrix X = Matrix::Random(7, 5);
    EXPECT_NEAR(A.apply(X).norm(), X.norm(), 1e-10);
}

TEST(PartialDct, RejectsBadFrequencies) {
    EXPECT_THROW(LinearMap::partial_dct(2, 2, {4}), ArgumentError);
    EXPECT_THROW(LinearMap::partial_dct(2, 2, {1, 1}), ArgumentError);
}

TEST(LinearMapTest, AdjointAndTightFrameIdentities) {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> normal;
    for (const LinearMap &A : probe_operators(rng)) {
        for (int t = 0; t < 20; ++t) {
            Matrix X(A.rows(), A.cols());
            for (Index k = 0; k < X.size(); ++k)
                X(k) = normal(rng);
            Vector y(A.measurements());
            for (Index k = 0; k < y.size(); ++k)
                y(k) = normal(rng);
            EXPECT_LE(std::abs(A.apply(X).dot(y) - (X.array() * A.adjoint(y).array()).sum()), 1e-10);
            EXPECT_LE((A.apply(A.adjoint(y)) - y).norm(), 1e-10);
            EXPECT_LE(A.apply(X).norm(), X.norm() + 1e-12);
        }
    }
}

TEST(LinearMapTest, ShapeChecks) {
    std::mt19937_64 rng(14);
    const LinearMap A = random_sampling_mask(3, 4, 0.5, rng);
    EXPECT_THROW(A.apply(Matrix::Zero(4, 3)), ArgumentError);
    EXPECT_THROW(A.adjoint(Vector::Zero(A.measurements() + 1)), ArgumentError);
}

TEST(LinearMapTest, GridRoundTrip) {
    std::mt19937_64 rng(15);
    for (const LinearMap &A : probe_operators(rng)) {
        const Vector y = Vector::LinSpaced(A.measurements(), 1.0, 2.0);
        const Matrix G = A.to_grid(y);
        EXPECT_EQ(A.from_grid(G), y);
        EXPECT_NEAR(G.norm(), y.norm(), 1e-14);
    }
}

TEST(ProjectBall, HandComputedOneByOne) {
    const LinearMap A = LinearMap::sampling(1, 1, {{0, 0}});
    Vector b(1);
    b << 2;
    const Matrix out = project_ball(A, Matrix::Zero(1, 1), b, 1.0);
    EXPECT_DOUBLE_EQ(out(0, 0), 1.0);
    EXPECT_DOUBLE_EQ((A.apply(out) - b).norm(), 1.0);
}

TEST(ProjectBall, InteriorPointUnchanged) {
    std::mt19937_64 rng(16);
    const LinearMap A = random_partial_dct(5, 5, 0.5, rng);
    const Matrix Y = Matrix::Random(5, 5);
    const Vector b = A.apply(Y) + 0.01 * Vector::Ones(A.measurements());
    EXPECT_EQ(project_ball(A, Y, b, 1.0), Y);
}

TEST(ProjectBall, ExactConstraintOverwritesSampledEntries) {
    std::mt19937_64 rng(17);
    const LinearMap A = random_sampling_mask(4, 5, 0.5, rng);
    const Matrix Y = Matrix::Random(4, 5);
    const Vector b = Vector::Random(A.measurements());
    const Matrix out = project_ball(A, Y, b, 0.0);
    Matrix expected = Y;
    const auto &idx = A.mask()->indices();
    for (std::size_t i = 0; i < idx.size(); ++i)
        expected(idx[i].row, idx[i].col) = b(static_cast<Index>(i));
    EXPECT_LE((out - expected).norm(), 1e-14);
}

TEST(ProjectBall, FeasibleIdempotentAndClosest) {
    std::mt19937_64 rng(18);
    std::normal_distribution<double> normal;
    for (const LinearMap &A : probe_operators(rng)) {
        for (double delta : {0.0, 0.3, 2.0}) {
            Matrix Y(A.rows(), A.cols());
            for (Index k = 0; k < Y.size(); ++k)
                Y(k) = normal(rng);
            Vector b(A.measurements());
            for (Index k = 0; k < b.size(); ++k)
                b(k) = 3.0 * normal(rng);
            const Matrix P = project_ball(A, Y, b, delta);
            EXPECT_LE((A.apply(P) - b).norm(), delta + 1e-8 + (delta == 0.0 ? 1e-10 : 0.0));
            EXPECT_LE((project_ball(A, P, b, delta) - P).norm(), 1e-10);
            // Random feasible points are never closer to Y.
            for (int s = 0; s < 20; ++s) {
                Matrix W(A.rows(), A.cols());
                for (Index k = 0; k < W.size(); ++k)
                    W(k) = normal(rng);
                W = project_ball(A, W, b, delta);
                EXPECT_LE((P - Y).norm(), (W - Y).norm() + 1e-8);
            }
        }
    }
}

TEST(ProjectBall, NegativeRadiusThrows) {
    const LinearMap A = LinearMap::sampling(1, 1, {{0, 0}});
    EXPECT_THROW(project_ball(A, Matrix::Zero(1, 1), Vector::Zero(1), -1.0), ArgumentError);
}

TEST(InverseIdentity, ResidualIsTiny) {
    std::mt19937_64 rng(19);
    const LinearMap mask = random_sampling_mask(6, 7, 0.5, rng);
    const LinearMap dct = random_partial_dct(6, 7, 0.5, rng);
    EXPECT_EQ(inverse_identity_residual(mask, 1.0, Matrix::Zero(6, 7)), 0.0);
    const Matrix X = Matrix::Random(6, 7);
    EXPECT_LE(inverse_identity_residual(mask, 3.0, X), 1e-10 * X.norm());
    EXPECT_LE(inverse_identity_residual(dct, 0.5, X), 1e-10 * X.norm());
    EXPECT_THROW(inverse_identity_residual(dct, 0.0, X), ArgumentError);
}

TEST(RandomOperators, SizesAndDeterminism) {
    EXPECT_EQ(sample_count(10, 10, 0.5), 50);
    EXPECT_EQ(sample_count(3, 3, 0.01), 1);
    EXPECT_THROW(sample_count(3, 3, 0.0), ArgumentError);

    auto r1 = make_rng(5, RngStream::Mask);
    auto r2 = make_rng(5, RngStream::Mask);
    const LinearMap a = random_sampling_mask(8, 9, 0.3, r1);
    const LinearMap b = random_sampling_mask(8, 9, 0.3, r2);
    EXPECT_EQ(a.mask()->indices(), b.mask()->indices());
    EXPECT_TRUE(std::is_sorted(a.mask()->indices().begin(), a.mask()->indices().end()));

    auto r3 = make_rng(5, RngStream::Frequencies);
    const LinearMap d = random_partial_dct(8, 9, 0.3, r3, true);
    EXPECT_EQ(d.dct()->kept().front(), 0);
    EXPECT_EQ(d.measurements(), sample_count(8, 9, 0.3));
}

TEST(OperatorFiles, RoundTripBothKinds) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "lowrank_operator_files";
    fs::create_directories(dir);
    std::mt19937_64 rng(20);
    const LinearMap mask = random_sampling_mask(5, 6, 0.5, rng);
    const LinearMap dct = random_partial_dct(5, 6, 0.5, rng);
    save_operator_file(mask, dir / "mask.txt");
    save_operator_file(dct, dir / "dct.txt");
    EXPECT_EQ(load_mask_file(dir / "mask.txt").mask()->indices(), mask.mask()->indices());
    EXPECT_EQ(load_dct_file(dir / "dct.txt").dct()->kept(), dct.dct()->kept());
}

TEST(OperatorFiles, MalformedFilesAreFormatErrors) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "lowrank_operator_files";
    fs::create_directories(dir);
    auto write = [&](const char *name, const char *text) {
        std::ofstream(dir / name) << text;
        return dir / name;
    };
    EXPECT_THROW(load_mask_file(write("bad_header.txt", "3 x 2\n")), FormatError);
    EXPECT_THROW(load_mask_file(write("short.txt", "3 3 2\n0 0\n")), FormatError);
    EXPECT_THROW(load_mask_file(write("range.txt", "3 3 1\n5 0\n")), FormatError);
    EXPECT_THROW(load_dct_file(write("dup.txt", "2 2 2\n1\n1\n")), FormatError);
    EXPECT_THROW(load_mask_file(dir / "does_not_exist.txt"), FormatError);
}
