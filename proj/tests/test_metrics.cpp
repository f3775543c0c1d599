// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "biflow/dataset.hpp"
#include "biflow/metrics.hpp"
#include "doctest.h"

using namespace biflow;
using namespace biflow::metrics;

namespace {

Eigen::MatrixXd randm(Eigen::Index r, Eigen::Index c, Rng& rng) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

toy::Image rand_image(int size, Rng& rng) {
    toy::Image img(size);
    for (auto& v : img.data()) v = rng.uniform();
    return img;
}

// Brute force over all permutations; sums in row order like the solver.
std::pair<double, std::vector<int>> brute_force(const Eigen::MatrixXd& s) {
    std::vector<int> perm(static_cast<std::size_t>(s.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    double best = -1e300;
    std::vector<int> arg;
    do {
        double t = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) t += s(static_cast<Eigen::Index>(i), perm[i]);
        t /= static_cast<double>(perm.size());
        if (t > best) {
            best = t;
            arg = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return {best, arg};
}

std::vector<toy::Image> views_of(const Dataset& ds, std::size_t begin, std::size_t end) {
    std::vector<toy::Image> out;
    for (std::size_t i = begin; i < end; ++i)
        for (const auto& v : ds.records[i].views) out.push_back(v);
    return out;
}

}  // namespace

TEST_CASE("extractor: deterministic, positively homogeneous, seed dependent") {
    Rng rng(1);
    const toy::Image img = rand_image(16, rng);
    FeatureExtractor fx(5, 16);
    CHECK(fx.dim() == kFeatureDim);
    CHECK(fx.features(img) == fx.features(img));
    CHECK(FeatureExtractor(5, 16).features(img) == fx.features(img));
    toy::Image scaled = img;
    for (auto& v : scaled.data()) v *= 2.5;
    CHECK((fx.features(scaled) - 2.5 * fx.features(img)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(FeatureExtractor(6, 16).features(img) != fx.features(img));
    CHECK_THROWS_AS(fx.features(toy::Image(8)), MetricsError);
}

TEST_CASE("extractor projection is orthonormal on the short side") {
    // 16x16 images give 128 statistics (> 64, rows orthonormal); 8x8 give 32 (< 64, columns).
    const Eigen::MatrixXd wide = FeatureExtractor(3, 16).projection();
    CHECK(wide.rows() == 64);
    CHECK(wide.cols() == 128);
    CHECK((wide * wide.transpose() - Eigen::MatrixXd::Identity(64, 64)).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::MatrixXd tall = FeatureExtractor(3, 8).projection();
    CHECK(tall.cols() == 32);
    CHECK((tall.transpose() * tall - Eigen::MatrixXd::Identity(32, 32)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(FeatureExtractor(3, 8).features(toy::Image(8)).norm() == 0.0);
}

TEST_CASE("similarity matrix") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(3, 5);
    CHECK(similarity_matrix(a, a).isApprox(Eigen::MatrixXd::Identity(3, 3)));
    Rng rng(4);
    Eigen::MatrixXd x = randm(3, 6, rng);
    Eigen::MatrixXd y = x;
    y.row(0) *= 3.0;
    y.row(2) *= 0.1;
    CHECK((similarity_matrix(x, y) - similarity_matrix(x, x)).cwiseAbs().maxCoeff() < 1e-15);
    Eigen::MatrixXd neg = -x;
    CHECK(similarity_matrix(x, neg)(1, 1) == doctest::Approx(-1.0).epsilon(1e-15));
    Eigen::MatrixXd z = x;
    z.row(1).setZero();
    CHECK(similarity_matrix(x, z)(0, 1) == 0.0);
}

TEST_CASE("hungarian: identity and permutation matrices") {
    auto id = hungarian_match_score(Eigen::MatrixXd::Identity(4, 4));
    CHECK(id.score == 1.0);
    CHECK(id.column_of == std::vector<int>{0, 1, 2, 3});
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(4, 4);
    const std::vector<int> perm = {2, 0, 3, 1};
    for (int i = 0; i < 4; ++i) p(i, perm[static_cast<std::size_t>(i)]) = 1.0;
    auto r = hungarian_match_score(p);
    CHECK(r.score == 1.0);
    CHECK(r.column_of == perm);
    CHECK_THROWS_AS(hungarian_match_score(Eigen::MatrixXd::Zero(3, 4)), MetricsError);
}

TEST_CASE("hungarian equals brute force on 1000 random 4x4 matrices") {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        Eigen::MatrixXd s = randm(4, 4, rng);
        const auto h = hungarian_match_score(s);
        const auto [best, arg] = brute_force(s);
        CHECK(h.score == best);
        double value = 0.0;
        for (std::size_t i = 0; i < 4; ++i) value += s(static_cast<Eigen::Index>(i), h.column_of[i]);
        CHECK(value / 4.0 == best);
    }
}

TEST_CASE("hungarian on larger sizes against brute force") {
    Rng rng(8);
    for (int n : {1, 2, 3, 5, 6, 7}) {
        for (int trial = 0; trial < 30; ++trial) {
            Eigen::MatrixXd s = randm(n, n, rng);
            CHECK(hungarian_match_score(s).score == doctest::Approx(brute_force(s).first).epsilon(1e-14));
        }
    }
}

TEST_CASE("hungarian is invariant under a shared row and column permutation") {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::MatrixXd s = randm(4, 4, rng);
        Eigen::PermutationMatrix<Eigen::Dynamic> perm(4);
        perm.setIdentity();
        std::vector<int> idx = {3, 1, 0, 2};
        for (int i = 0; i < 4; ++i) perm.indices()[i] = idx[static_cast<std::size_t>(i)];
        Eigen::MatrixXd t = perm * s * perm.transpose();
        CHECK(hungarian_match_score(t).score == doctest::Approx(hungarian_match_score(s).score).epsilon(1e-15));
    }
}

TEST_CASE("gaussian summary") {
    Eigen::MatrixXd two(2, 1);
    two << 1.0, -1.0;
    auto g = gaussian_summary(two);
    CHECK(g.mean(0) == 0.0);
    CHECK(g.cov(0, 0) == 2.0);

    Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(10, 3, 4.2);
    CHECK(gaussian_summary(constant).cov.cwiseAbs().maxCoeff() < 1e-24);

    Rng rng(10);
    Eigen::MatrixXd f = randm(100, 5, rng);
    auto s = gaussian_summary(f);
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b) {
            double ma = 0, mb = 0;
            for (int i = 0; i < 100; ++i) {
                ma += f(i, a);
                mb += f(i, b);
            }
            ma /= 100;
            mb /= 100;
            double c = 0;
            for (int i = 0; i < 100; ++i) c += (f(i, a) - ma) * (f(i, b) - mb);
            CHECK(std::abs(s.cov(a, b) - c / 99) < 1e-10);
        }
    CHECK(s.cov == s.cov.transpose());
    CHECK_THROWS_AS(gaussian_summary(Eigen::MatrixXd::Zero(1, 3)), MetricsError);
}

TEST_CASE("matrix square root") {
    CHECK(matrix_sqrt_psd(Eigen::MatrixXd::Identity(3, 3)).isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-14));
    Eigen::MatrixXd d = Eigen::Vector2d(4, 9).asDiagonal();
    Eigen::MatrixXd r = matrix_sqrt_psd(d);
    CHECK(std::abs(r(0, 0) - 2.0) < 1e-14);
    CHECK(std::abs(r(1, 1) - 3.0) < 1e-14);
    CHECK(std::abs(r(0, 1)) < 1e-14);

    Rng rng(11);
    Eigen::MatrixXd b = randm(64, 64, rng);
    Eigen::MatrixXd a = b.transpose() * b;
    a = 0.5 * (a + a.transpose()).eval();
    Eigen::MatrixXd sq = matrix_sqrt_psd(a);
    CHECK((sq * sq - a).norm() / a.norm() < 1e-8);
    CHECK(sq == sq.transpose());

    Eigen::MatrixXd asym = Eigen::MatrixXd::Identity(2, 2);
    asym(0, 1) = 1e-6;
    CHECK_THROWS_AS(matrix_sqrt_psd(asym), MetricsError);
    Eigen::MatrixXd negative = Eigen::Vector2d(1, -1e-3).asDiagonal();
    CHECK_THROWS_AS(matrix_sqrt_psd(negative), MetricsError);
    Eigen::MatrixXd tiny_negative = Eigen::Vector2d(1, -1e-10).asDiagonal();
    CHECK(matrix_sqrt_psd(tiny_negative)(1, 1) == 0.0);
}

TEST_CASE("frechet distance closed forms") {
    Rng rng(12);
    Eigen::MatrixXd f = randm(200, 8, rng);
    auto g = gaussian_summary(f);
    CHECK(frechet_distance(g, g) < 1e-9);

    GaussianSummary a{Eigen::VectorXd::Constant(1, 0.0), Eigen::MatrixXd::Constant(1, 1, 1.0)};
    GaussianSummary b{Eigen::VectorXd::Constant(1, 3.0), Eigen::MatrixXd::Constant(1, 1, 4.0)};
    CHECK(std::abs(frechet_distance(a, b) - 10.0) < 1e-9);

    GaussianSummary c{Eigen::VectorXd::Zero(2), Eigen::Vector2d(1, 4).asDiagonal()};
    GaussianSummary d{Eigen::VectorXd::Zero(2), Eigen::Vector2d(4, 1).asDiagonal()};
    CHECK(std::abs(frechet_distance(c, d) - 2.0) < 1e-9);

    GaussianSummary e{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)};
    CHECK_THROWS_AS(frechet_distance(c, e), MetricsError);
}

TEST_CASE("frechet distance is symmetric") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        auto g1 = gaussian_summary(randm(80, 16, rng));
        Eigen::MatrixXd f2 = randm(80, 16, rng) * 1.7;
        f2.array() += 0.3;
        auto g2 = gaussian_summary(f2);
        CHECK(std::abs(frechet_distance(g1, g2) - frechet_distance(g2, g1)) < 1e-9);
    }
}

TEST_CASE("FD between halves of an i.i.d. toy sample shrinks with sample size") {
    DatasetConfig dc;
    dc.seed = 31;
    dc.count = 10000;
    dc.image = 16;
    const Dataset ds = generate_dataset(dc);
    FeatureExtractor fx(1, 16);
    auto fd_split = [&](std::size_t half) {
        auto a = fx.extract(views_of(ds, 0, half), "gt");
        auto b = fx.extract(views_of(ds, half, 2 * half), "generated");
        return frechet_distance(gaussian_summary(a.rows), gaussian_summary(b.rows));
    };
    const double small = fd_split(500);
    const double large = fd_split(5000);
    MESSAGE("FD 500-split " << small << ", 5000-split " << large);
    CHECK(large < small);
}

TEST_CASE("evaluate_run: identity, view relabeling, count mismatch") {
    DatasetConfig dc;
    dc.seed = 5;
    dc.count = 40;
    dc.image = 16;
    const Dataset ds = generate_dataset(dc);
    std::vector<ViewSet> gt;
    for (const auto& r : ds.records) gt.push_back(render_views(r.grid, 16));
    FeatureExtractor fx(2, 16);
    auto self = evaluate_run(gt, gt, fx);
    CHECK(std::abs(self.hungarian - 1.0) < 1e-9);
    CHECK(self.fd < 1e-9);
    CHECK(self.objects == 40);

    std::vector<ViewSet> rotated = gt;
    for (auto& vs : rotated) std::rotate(vs.begin(), vs.begin() + 1, vs.end());
    auto rel = evaluate_run(gt, rotated, fx);
    CHECK(rel.hungarian == doctest::Approx(self.hungarian).epsilon(1e-14));

    std::vector<ViewSet> shorter(gt.begin(), gt.end() - 1);
    CHECK_THROWS_AS(evaluate_run(gt, shorter, fx), MetricsError);

    // Pure: a second evaluation is bit-identical.
    auto again = evaluate_run(gt, rotated, fx);
    CHECK(again.hungarian == rel.hungarian);
    CHECK(again.fd == rel.fd);
}

TEST_CASE("FD of re-draws is below FD between disjoint sub-populations") {
    DatasetConfig dc;
    dc.image = 16;
    dc.count = 1200;
    dc.seed = 41;
    const Dataset a = generate_dataset(dc);
    dc.seed = 42;
    const Dataset b = generate_dataset(dc);
    FeatureExtractor fx(3, 16);
    auto feats = [&](const Dataset& ds, int shape_filter) {
        std::vector<toy::Image> imgs;
        for (const auto& r : ds.records) {
            const auto attrs = toy::attributes_from_tokens(r.tokens);
            if (shape_filter >= 0 && static_cast<int>(attrs.shape) != shape_filter) continue;
            for (const auto& v : r.views) imgs.push_back(v);
        }
        return gaussian_summary(fx.extract(imgs, "gt").rows);
    };
    const double redraw = frechet_distance(feats(a, -1), feats(b, -1));
    const double disjoint = frechet_distance(feats(a, static_cast<int>(toy::ShapeClass::box)),
                                             feats(b, static_cast<int>(toy::ShapeClass::sphere)));
    MESSAGE("re-draw FD " << redraw << ", boxes vs spheres FD " << disjoint);
    CHECK(redraw < disjoint);
}

TEST_CASE("feature files round trip through float32") {
    const auto dir = std::filesystem::temp_directory_path() / "biflow_features";
    std::filesystem::remove_all(dir);
    Rng rng(14);
    FeatureSet fs;
    fs.rows = randm(6, 4, rng);
    fs.source = "generated";
    fs.extractor_seed = 9;
    write_features(dir, fs);
    const FeatureSet back = read_features(dir);
    CHECK(back.source == "generated");
    CHECK(back.extractor_seed == 9);
    REQUIRE(back.rows.rows() == 6);
    for (Eigen::Index i = 0; i < 6; ++i)
        for (Eigen::Index k = 0; k < 4; ++k) CHECK(back.rows(i, k) == static_cast<double>(static_cast<float>(fs.rows(i, k))));
    std::filesystem::resize_file(dir / "features.bin", 8);
    CHECK_THROWS_AS(read_features(dir), MetricsError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("report files") {
    const auto dir = std::filesystem::temp_directory_path() / "biflow_report";
    std::filesystem::remove_all(dir);
    MetricsReport r;
    r.objects = 2;
    r.hungarian = 0.75;
    r.fd = 1.5;
    r.per_object = {0.5, 1.0};
    write_report(dir, r, "joint");
    std::ifstream in(dir / "report.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "condition,objects,hungarian,fd");
    CHECK(row == "joint,2,0.75,1.5");
    CHECK(std::filesystem::exists(dir / "report.json"));
    std::filesystem::remove_all(dir);
}
