// SPDX-License-Identifier: Apache-2.0
//
// Evaluation over a fixed toy feature space: Hungarian-matched cosine
// similarity between the view renders of paired objects, and the Frechet
// distance between Gaussian fits of all pooled view features.
//
// Feature map: every image is cut into 4x4 pixel cells; per cell and channel
// the mean and the standard deviation are taken, and the concatenated vector
// is multiplied by a seeded Gaussian matrix whose rows (or columns, when the
// statistics vector is shorter than d) are orthonormalized. Both statistics
// are positively homogeneous, so features(a * img) = a * features(img) for a >= 0.
#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "biflow/toy_world.hpp"

namespace biflow::metrics {

inline constexpr int kFeatureDim = 64;
inline constexpr int kFeatureCell = 4;
inline constexpr int kExtractorVersion = 1;

struct MetricsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FeatureSet {
    Eigen::MatrixXd rows;  // M x d
    std::string source = "gt";
    std::uint64_t extractor_seed = 0;
    int extractor_version = kExtractorVersion;
};

class FeatureExtractor {
public:
    FeatureExtractor(std::uint64_t seed, int image_size, int dim = kFeatureDim);
    std::uint64_t seed() const { return seed_; }
    int dim() const { return static_cast<int>(proj_.rows()); }
    const Eigen::MatrixXd& projection() const { return proj_; }

    Eigen::VectorXd features(const toy::Image& image) const;
    FeatureSet extract(const std::vector<toy::Image>& images, std::string source) const;
    std::string fingerprint() const;

private:
    std::uint64_t seed_;
    int image_size_;
    Eigen::MatrixXd proj_;  // d x raw
};

/// Cosine similarity of every row pair; rows that are zero give 0.
Eigen::MatrixXd similarity_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct Assignment {
    double score = 0.0;            // mean of matched entries, summed in row order
    std::vector<int> column_of;    // row i is matched to column column_of[i]
};

/// Maximum-weight perfect matching by Kuhn-Munkres with potentials, V <= 16.
Assignment hungarian_match_score(const Eigen::MatrixXd& s);

struct GaussianSummary {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Column mean and unbiased covariance, symmetrized. Needs at least two rows.
GaussianSummary gaussian_summary(const Eigen::MatrixXd& features);

inline constexpr double kSymmetryTolerance = 1e-8;
inline constexpr double kEigenFloor = -1e-8;
inline constexpr double kFrechetFloor = -1e-6;

/// Principal square root through the symmetric eigendecomposition; eigenvalues
/// in [-1e-8, 0) are clipped to zero, anything lower is an error.
Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& a);

/// |mu1 - mu2|^2 + tr(S1 + S2 - 2 sqrt(S1^1/2 S2 S1^1/2)); tiny negatives clip to 0.
double frechet_distance(const GaussianSummary& g1, const GaussianSummary& g2);

/// The three toy views of one object.
using ViewSet = std::array<toy::Image, 3>;
ViewSet render_views(const toy::VoxelGrid& grid, int image_size);

struct MetricsReport {
    std::size_t objects = 0;
    double hungarian = 0.0;
    double fd = 0.0;
    std::vector<double> per_object;
    std::uint64_t extractor_seed = 0;
    std::string extractor_fingerprint;
    std::string fd_pooling = "all_views";
};

MetricsReport evaluate_run(const std::vector<ViewSet>& gt, const std::vector<ViewSet>& generated,
                           const FeatureExtractor& extractor);

/// report.json (full, with per-object scores) and report.csv (one summary row).
void write_report(const std::filesystem::path& dir, const MetricsReport& report, const std::string& label = "all");
std::string report_json(const MetricsReport& report);

/// features.json + features.bin (little-endian float32, row-major).
void write_features(const std::filesystem::path& dir, const FeatureSet& set);
FeatureSet read_features(const std::filesystem::path& dir);

/// Fixed-precision rendering used in every report so equal values print equally.
std::string format_number(double v);

}  // namespace biflow::metrics
