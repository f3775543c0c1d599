// SPDX-License-Identifier: Apache-2.0
#include "biflow/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "biflow/dataset.hpp"
#include "biflow/rng.hpp"
#include "binio.hpp"
#include "json.hpp"

namespace biflow::metrics {

using nlohmann::json;

namespace {

// Modified Gram-Schmidt over the rows of m, in order.
void orthonormalize_rows(Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < i; ++j) m.row(i) -= m.row(i).dot(m.row(j)) * m.row(j);
        const double n = m.row(i).norm();
        if (n == 0.0) throw MetricsError("degenerate feature projection");
        m.row(i) /= n;
    }
}

}  // namespace

FeatureExtractor::FeatureExtractor(std::uint64_t seed, int image_size, int dim) : seed_(seed), image_size_(image_size) {
    if (image_size < kFeatureCell || image_size % kFeatureCell != 0)
        throw MetricsError("feature extractor needs an image size divisible by " + std::to_string(kFeatureCell));
    if (dim < 1) throw MetricsError("feature dimension must be positive");
    const int cells = (image_size / kFeatureCell) * (image_size / kFeatureCell);
    const int raw = cells * 4 * 2;
    Rng rng(seed);
    proj_.resize(dim, raw);
    for (Eigen::Index r = 0; r < proj_.rows(); ++r)
        for (Eigen::Index c = 0; c < proj_.cols(); ++c) proj_(r, c) = rng.normal();
    if (dim <= raw) {
        orthonormalize_rows(proj_);
    } else {
        Eigen::MatrixXd t = proj_.transpose();
        orthonormalize_rows(t);
        proj_ = t.transpose();
    }
}

Eigen::VectorXd FeatureExtractor::features(const toy::Image& image) const {
    if (image.size() != image_size_)
        throw MetricsError("image size " + std::to_string(image.size()) + " differs from the extractor's " +
                           std::to_string(image_size_));
    const int per_side = image_size_ / kFeatureCell;
    Eigen::VectorXd stats(proj_.cols());
    Eigen::Index k = 0;
    constexpr double inv = 1.0 / (kFeatureCell * kFeatureCell);
    for (int cr = 0; cr < per_side; ++cr)
        for (int cc = 0; cc < per_side; ++cc) {
            std::array<double, 4> mean{};
            for (int r = 0; r < kFeatureCell; ++r)
                for (int c = 0; c < kFeatureCell; ++c)
                    for (int ch = 0; ch < 4; ++ch) mean[ch] += image.at(cr * kFeatureCell + r, cc * kFeatureCell + c, ch);
            for (auto& m : mean) m *= inv;
            std::array<double, 4> var{};
            for (int r = 0; r < kFeatureCell; ++r)
                for (int c = 0; c < kFeatureCell; ++c)
                    for (int ch = 0; ch < 4; ++ch) {
                        const double d = image.at(cr * kFeatureCell + r, cc * kFeatureCell + c, ch) - mean[ch];
                        var[ch] += d * d;
                    }
            for (int ch = 0; ch < 4; ++ch) stats(k++) = mean[ch];
            for (int ch = 0; ch < 4; ++ch) stats(k++) = std::sqrt(var[ch] * inv);
        }
    return proj_ * stats;
}

FeatureSet FeatureExtractor::extract(const std::vector<toy::Image>& images, std::string source) const {
    FeatureSet fs;
    fs.source = std::move(source);
    fs.extractor_seed = seed_;
    fs.rows.resize(static_cast<Eigen::Index>(images.size()), proj_.rows());
    for (std::size_t i = 0; i < images.size(); ++i) fs.rows.row(static_cast<Eigen::Index>(i)) = features(images[i]).transpose();
    return fs;
}

std::string FeatureExtractor::fingerprint() const {
    return "toyfeat-v" + std::to_string(kExtractorVersion) + "-seed" + std::to_string(seed_) + "-d" +
           std::to_string(proj_.rows()) + "-p" + std::to_string(image_size_);
}

Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.cols() != b.cols()) throw MetricsError("similarity_matrix: feature dimensions differ");
    Eigen::MatrixXd s(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            const double na = a.row(i).norm(), nb = b.row(j).norm();
            s(i, j) = na == 0.0 || nb == 0.0 ? 0.0 : a.row(i).dot(b.row(j)) / (na * nb);
        }
    return s;
}

Assignment hungarian_match_score(const Eigen::MatrixXd& s) {
    if (s.rows() != s.cols()) throw MetricsError("hungarian_match_score: matrix is not square");
    const auto n = static_cast<int>(s.rows());
    if (n == 0 || n > 16) throw MetricsError("hungarian_match_score: size must lie in [1, 16]");
    if (!s.allFinite()) throw MetricsError("hungarian_match_score: non-finite similarity");
    // Minimize -s. Arrays are 1-based; column 0 is the virtual start column.
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = -s(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    Assignment out;
    out.column_of.assign(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j) out.column_of[static_cast<std::size_t>(p[j] - 1)] = j - 1;
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += s(i, out.column_of[static_cast<std::size_t>(i)]);
    out.score = total / n;
    return out;
}

GaussianSummary gaussian_summary(const Eigen::MatrixXd& f) {
    if (f.rows() < 2) throw MetricsError("gaussian_summary needs at least two feature rows");
    if (!f.allFinite()) throw MetricsError("gaussian_summary: non-finite features");
    GaussianSummary g;
    const auto m = static_cast<double>(f.rows());
    g.mean = f.colwise().sum().transpose() / m;
    const Eigen::MatrixXd centered = f.rowwise() - g.mean.transpose();
    g.cov = (centered.transpose() * centered) / (m - 1.0);
    g.cov = 0.5 * (g.cov + g.cov.transpose()).eval();
    return g;
}

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols()) throw MetricsError("matrix_sqrt_psd: matrix is not square");
    if (!a.allFinite()) throw MetricsError("matrix_sqrt_psd: non-finite entries");
    const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
    if (asym > kSymmetryTolerance) throw MetricsError("matrix_sqrt_psd: asymmetry " + std::to_string(asym) + " exceeds 1e-8");
    const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw MetricsError("matrix_sqrt_psd: eigendecomposition failed");
    Eigen::VectorXd lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (lam(i) < kEigenFloor) throw MetricsError("matrix_sqrt_psd: eigenvalue " + std::to_string(lam(i)) + " below -1e-8");
        lam(i) = std::sqrt(std::max(lam(i), 0.0));
    }
    const Eigen::MatrixXd& vecs = es.eigenvectors();
    Eigen::MatrixXd r = vecs * lam.asDiagonal() * vecs.transpose();
    return 0.5 * (r + r.transpose());
}

double frechet_distance(const GaussianSummary& g1, const GaussianSummary& g2) {
    if (g1.mean.size() != g2.mean.size() || g1.cov.rows() != g2.cov.rows() || g1.cov.rows() != g1.mean.size())
        throw MetricsError("frechet_distance: dimension mismatch");
    const double dmu = (g1.mean - g2.mean).squaredNorm();
    const Eigen::MatrixXd s1h = matrix_sqrt_psd(g1.cov);
    Eigen::MatrixXd inner = s1h * g2.cov * s1h;
    inner = 0.5 * (inner + inner.transpose()).eval();
    const double cross = matrix_sqrt_psd(inner).trace();
    const double fd = dmu + g1.cov.trace() + g2.cov.trace() - 2.0 * cross;
    if (fd < kFrechetFloor) throw MetricsError("frechet_distance: result " + std::to_string(fd) + " is below -1e-6");
    return std::max(fd, 0.0);
}

ViewSet render_views(const toy::VoxelGrid& grid, int image_size) {
    ViewSet out;
    for (toy::View v : toy::kAllViews) out[static_cast<std::size_t>(v)] = toy::render_grid(grid, v, image_size);
    return out;
}

MetricsReport evaluate_run(const std::vector<ViewSet>& gt, const std::vector<ViewSet>& generated,
                           const FeatureExtractor& extractor) {
    if (gt.size() != generated.size())
        throw MetricsError("evaluate_run: " + std::to_string(gt.size()) + " ground-truth objects but " +
                           std::to_string(generated.size()) + " generated");
    if (gt.size() < 1) throw MetricsError("evaluate_run: no objects");
    MetricsReport rep;
    rep.objects = gt.size();
    rep.extractor_seed = extractor.seed();
    rep.extractor_fingerprint = extractor.fingerprint();
    const auto V = static_cast<Eigen::Index>(toy::kAllViews.size());
    Eigen::MatrixXd all_gt(V * static_cast<Eigen::Index>(gt.size()), extractor.dim());
    Eigen::MatrixXd all_gen(all_gt.rows(), all_gt.cols());
    double total = 0.0;
    for (std::size_t o = 0; o < gt.size(); ++o) {
        Eigen::MatrixXd a(V, extractor.dim()), b(V, extractor.dim());
        for (Eigen::Index v = 0; v < V; ++v) {
            a.row(v) = extractor.features(gt[o][static_cast<std::size_t>(v)]).transpose();
            b.row(v) = extractor.features(generated[o][static_cast<std::size_t>(v)]).transpose();
        }
        all_gt.middleRows(static_cast<Eigen::Index>(o) * V, V) = a;
        all_gen.middleRows(static_cast<Eigen::Index>(o) * V, V) = b;
        const double score = hungarian_match_score(similarity_matrix(a, b)).score;
        rep.per_object.push_back(score);
        total += score;
    }
    rep.hungarian = total / static_cast<double>(gt.size());
    rep.fd = frechet_distance(gaussian_summary(all_gt), gaussian_summary(all_gen));
    return rep;
}

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string report_json(const MetricsReport& r) {
    json j;
    j["objects"] = r.objects;
    j["hungarian"] = r.hungarian;
    j["fd"] = r.fd;
    j["per_object_hungarian"] = r.per_object;
    j["views"] = {"front", "top", "bottom"};
    j["extractor"] = {{"seed", r.extractor_seed}, {"fingerprint", r.extractor_fingerprint}, {"version", kExtractorVersion}};
    j["fd_pooling"] = r.fd_pooling;
    return j.dump(2) + "\n";
}

void write_report(const std::filesystem::path& dir, const MetricsReport& report, const std::string& label) {
    std::filesystem::create_directories(dir);
    binio::write_text(dir / "report.json", report_json(report));
    binio::write_text(dir / "report.csv", "condition,objects,hungarian,fd\n" + label + "," + std::to_string(report.objects) +
                                              "," + format_number(report.hungarian) + "," + format_number(report.fd) + "\n");
}

void write_features(const std::filesystem::path& dir, const FeatureSet& set) {
    std::vector<std::uint8_t> payload;
    for (Eigen::Index i = 0; i < set.rows.rows(); ++i)
        for (Eigen::Index k = 0; k < set.rows.cols(); ++k) binio::put_f32(payload, set.rows(i, k));
    json j;
    j["format_version"] = 1;
    j["rows"] = set.rows.rows();
    j["dim"] = set.rows.cols();
    j["source"] = set.source;
    j["extractor_seed"] = set.extractor_seed;
    j["extractor_version"] = set.extractor_version;
    j["payload_checksum"] = fnv1a64_hex(payload);
    std::filesystem::create_directories(dir);
    binio::write_file(dir / "features.bin", payload);
    binio::write_text(dir / "features.json", j.dump(2) + "\n");
}

FeatureSet read_features(const std::filesystem::path& dir) {
    const auto manifest = dir / "features.json";
    if (!std::filesystem::exists(manifest)) throw MetricsError("missing " + manifest.string());
    FeatureSet fs;
    std::size_t rows = 0, dim = 0;
    std::string checksum;
    try {
        std::ifstream in(manifest);
        const json j = json::parse(in);
        if (j.at("format_version").get<int>() != 1) throw MetricsError("unsupported features format version");
        rows = j.at("rows").get<std::size_t>();
        dim = j.at("dim").get<std::size_t>();
        fs.source = j.at("source").get<std::string>();
        if (fs.source != "gt" && fs.source != "generated") throw MetricsError("feature source must be gt or generated");
        fs.extractor_seed = j.at("extractor_seed").get<std::uint64_t>();
        fs.extractor_version = j.at("extractor_version").get<int>();
        checksum = j.at("payload_checksum").get<std::string>();
    } catch (const json::exception& e) {
        throw MetricsError("malformed " + manifest.string() + ": " + e.what());
    }
    const auto payload = binio::read_file(dir / "features.bin");
    if (payload.size() != rows * dim * 4) throw MetricsError("features.bin size does not match rows x dim");
    if (fnv1a64_hex(payload) != checksum) throw MetricsError("features.bin checksum mismatch");
    fs.rows.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t k = 0; k < dim; ++k)
            fs.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = binio::get_f32(payload.data() + 4 * (i * dim + k));
    if (!fs.rows.allFinite()) throw MetricsError("features.bin holds non-finite values");
    return fs;
}

}  // namespace biflow::metrics
