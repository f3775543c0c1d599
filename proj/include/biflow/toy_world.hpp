// SPDX-License-Identifier: Apache-2.0
//
// Synthetic voxel assets standing in for 3D objects.
//
// An asset is a G x G x G x 4 grid (occupancy + RGB), indexed [x][y][z][c]
// with y pointing up. Five attributes fully determine the grid up to a
// +-1 voxel jitter of the per-axis extents:
//
//   shape_class  box | sphere | cylinder | cross
//   size         small | medium | large        (base extent G/2, 3G/4, G)
//   top_color    palette index, painted on the topmost voxel of every
//                column that holds at least two voxels
//   body_color   palette index, everywhere else
//   marking      plain | striped | dotted      (darkened body voxels, never
//                on the bottommost voxel of a column)
//
// Consequently the bottom view only ever shows the body color: top color and
// marking are hidden from it, while text tokens never reveal the jitter.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "biflow/rng.hpp"
#include "biflow/tensor.hpp"

namespace biflow::toy {

enum class ShapeClass : std::uint8_t { box, sphere, cylinder, cross };
enum class SizeClass : std::uint8_t { small, medium, large };
enum class Marking : std::uint8_t { plain, striped, dotted };

inline constexpr int kShapeCount = 4;
inline constexpr int kSizeCount = 3;
inline constexpr int kPaletteSize = 6;
inline constexpr int kMarkingCount = 3;
inline constexpr int kChannels = 4;
inline constexpr int kTextTokens = 5;

/// Field-major, value-minor: shape 0-3, size 4-6, top 7-12, body 13-18, marking 19-21.
inline constexpr std::array<int, kTextTokens> kFieldOffsets = {0, 4, 7, 13, 19};
inline constexpr int kVocabSize = 22;

struct Rgb {
    double r, g, b;
};

/// red, green, blue, yellow, purple, white
const std::array<Rgb, kPaletteSize>& palette();
std::string_view palette_name(int index);
inline constexpr double kMarkingShade = 0.45;

struct Attributes {
    ShapeClass shape = ShapeClass::box;
    SizeClass size = SizeClass::small;
    int top_color = 0;
    int body_color = 0;
    Marking marking = Marking::plain;

    friend bool operator==(const Attributes&, const Attributes&) = default;
};

std::string to_string(const Attributes& a);
/// Parses "box,small,red,red,plain".
Attributes parse_attributes(std::string_view text);

class VoxelGrid {
public:
    VoxelGrid() = default;
    explicit VoxelGrid(int resolution);

    int resolution() const { return res_; }
    std::size_t index(int x, int y, int z, int c) const {
        return ((static_cast<std::size_t>(x) * res_ + y) * res_ + z) * kChannels + c;
    }
    double& at(int x, int y, int z, int c) { return data_[index(x, y, z, c)]; }
    double at(int x, int y, int z, int c) const { return data_[index(x, y, z, c)]; }
    bool occupied(int x, int y, int z) const { return at(x, y, z, 0) >= 0.5; }
    std::size_t occupied_count() const;

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

private:
    int res_ = 0;
    std::vector<double> data_;
};

struct ToyAsset {
    Attributes attrs;
    std::array<int, 3> jitter{};  // per-axis extent delta in {-1, 0, 1}
    VoxelGrid grid;
};

struct Extents {
    std::array<int, 3> lo, size;
};

/// Bounding box used by the rasterizer: base extent per size class plus
/// jitter, clamped to [2, G], centered with lo = (G - size) / 2.
Extents shape_extents(SizeClass size, const std::array<int, 3>& jitter, int resolution);

VoxelGrid rasterize(const Attributes& attrs, const std::array<int, 3>& jitter, int resolution);

/// Draws attributes uniformly and independently, then the jitter. G >= 8, G % 8 == 0.
ToyAsset sample_asset(Rng& rng, int resolution);

// ---------------------------------------------------------------- views

enum class View : std::uint8_t { front, top, bottom };
inline constexpr std::array<View, 3> kAllViews = {View::front, View::top, View::bottom};
std::string_view view_name(View v);
View parse_view(std::string_view name);

/// P x P x 4 image: RGB then silhouette, row-major.
class Image {
public:
    Image() = default;
    explicit Image(int size) : size_(size), data_(static_cast<std::size_t>(size) * size * 4, 0.0) {}

    int size() const { return size_; }
    double& at(int row, int col, int c) { return data_[(static_cast<std::size_t>(row) * size_ + col) * 4 + c]; }
    double at(int row, int col, int c) const { return data_[(static_cast<std::size_t>(row) * size_ + col) * 4 + c]; }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    int size_ = 0;
    std::vector<double> data_;
};

/// Orthographic first-hit projection. Front looks along +z (rows = y from the
/// top down, cols = x); top looks down -y and bottom looks up +y (rows = z,
/// cols = x). Each voxel covers (P/G)^2 pixels. Empty grids give black images.
Image render_grid(const VoxelGrid& grid, View view, int image_size);

/// As render_grid, but rejects assets without occupied voxels.
Image render_view(const ToyAsset& asset, View view, int image_size);

// ---------------------------------------------------------------- conditions

std::array<std::int32_t, kTextTokens> text_token_ids(const Attributes& attrs);
Attributes attributes_from_tokens(const std::array<std::int32_t, kTextTokens>& ids);

/// Non-overlapping patch x patch tiles flattened as (row, col, channel):
/// returns [(P/patch)^2, patch*patch*4].
Tensor image_patches(const Image& image, int patch);

// ---------------------------------------------------------------- latent

/// Affine map v -> 2v - 1 on every channel, shape [G, G, G, 4].
Tensor asset_to_latent(const VoxelGrid& grid);

/// Inverse map; occupancy thresholds at 0.5 (latent 0 decodes as occupied),
/// colors clamped to [0, 1] and zeroed on empty voxels.
VoxelGrid latent_to_grid(const Tensor& latent);

}  // namespace biflow::toy
