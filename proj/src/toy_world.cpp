// SPDX-License-Identifier: Apache-2.0
#include "biflow/toy_world.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace biflow::toy {

namespace {

constexpr std::array<std::string_view, kShapeCount> kShapeNames = {"box", "sphere", "cylinder", "cross"};
constexpr std::array<std::string_view, kSizeCount> kSizeNames = {"small", "medium", "large"};
constexpr std::array<std::string_view, kPaletteSize> kColorNames = {"red", "green", "blue", "yellow", "purple", "white"};
constexpr std::array<std::string_view, kMarkingCount> kMarkingNames = {"plain", "striped", "dotted"};

template <std::size_t N>
int lookup(const std::array<std::string_view, N>& names, std::string_view value, std::string_view field) {
    for (std::size_t i = 0; i < N; ++i)
        if (names[i] == value) return static_cast<int>(i);
    throw std::invalid_argument("unknown " + std::string(field) + " value '" + std::string(value) + "'");
}

void check_attributes(const Attributes& a) {
    if (static_cast<int>(a.shape) >= kShapeCount) throw std::invalid_argument("unknown shape_class value");
    if (static_cast<int>(a.size) >= kSizeCount) throw std::invalid_argument("unknown size value");
    if (a.top_color < 0 || a.top_color >= kPaletteSize) throw std::invalid_argument("unknown top_color value");
    if (a.body_color < 0 || a.body_color >= kPaletteSize) throw std::invalid_argument("unknown body_color value");
    if (static_cast<int>(a.marking) >= kMarkingCount) throw std::invalid_argument("unknown marking value");
}

}  // namespace

const std::array<Rgb, kPaletteSize>& palette() {
    static const std::array<Rgb, kPaletteSize> colors = {{
        {0.90, 0.10, 0.10},
        {0.10, 0.80, 0.20},
        {0.10, 0.20, 0.90},
        {0.95, 0.85, 0.10},
        {0.60, 0.20, 0.80},
        {0.95, 0.95, 0.95},
    }};
    return colors;
}

std::string_view palette_name(int index) { return kColorNames.at(static_cast<std::size_t>(index)); }

std::string to_string(const Attributes& a) {
    std::ostringstream os;
    os << kShapeNames[static_cast<int>(a.shape)] << ',' << kSizeNames[static_cast<int>(a.size)] << ','
       << kColorNames.at(a.top_color) << ',' << kColorNames.at(a.body_color) << ','
       << kMarkingNames[static_cast<int>(a.marking)];
    return os.str();
}

Attributes parse_attributes(std::string_view text) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        auto comma = text.find(',', start);
        fields.push_back(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    if (fields.size() != kTextTokens)
        throw std::invalid_argument("attributes need 5 comma-separated fields: shape,size,top,body,marking");
    Attributes a;
    a.shape = static_cast<ShapeClass>(lookup(kShapeNames, fields[0], "shape_class"));
    a.size = static_cast<SizeClass>(lookup(kSizeNames, fields[1], "size"));
    a.top_color = lookup(kColorNames, fields[2], "top_color");
    a.body_color = lookup(kColorNames, fields[3], "body_color");
    a.marking = static_cast<Marking>(lookup(kMarkingNames, fields[4], "marking"));
    return a;
}

// ---------------------------------------------------------------- grid

VoxelGrid::VoxelGrid(int resolution)
    : res_(resolution), data_(static_cast<std::size_t>(resolution) * resolution * resolution * kChannels, 0.0) {
    if (resolution <= 0) throw std::invalid_argument("grid resolution must be positive");
}

std::size_t VoxelGrid::occupied_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < data_.size(); i += kChannels) n += data_[i] >= 0.5 ? 1 : 0;
    return n;
}

Extents shape_extents(SizeClass size, const std::array<int, 3>& jitter, int resolution) {
    const int base = resolution * (2 + static_cast<int>(size)) / 4;  // G/2, 3G/4, G
    Extents e{};
    for (int a = 0; a < 3; ++a) {
        e.size[a] = std::clamp(base + jitter[a], 2, resolution);
        e.lo[a] = (resolution - e.size[a]) / 2;
    }
    return e;
}

VoxelGrid rasterize(const Attributes& attrs, const std::array<int, 3>& jitter, int resolution) {
    check_attributes(attrs);
    const int G = resolution;
    VoxelGrid grid(G);
    const Extents ext = shape_extents(attrs.size, jitter, G);
    std::array<double, 3> center{}, radius{};
    for (int a = 0; a < 3; ++a) {
        center[a] = ext.lo[a] + ext.size[a] / 2.0;
        radius[a] = ext.size[a] / 2.0;
    }
    auto inside = [&](int x, int y, int z) {
        const std::array<int, 3> p = {x, y, z};
        for (int a = 0; a < 3; ++a)
            if (p[a] < ext.lo[a] || p[a] >= ext.lo[a] + ext.size[a]) return false;
        std::array<double, 3> u{};
        for (int a = 0; a < 3; ++a) u[a] = (p[a] + 0.5 - center[a]) / radius[a];
        switch (attrs.shape) {
            case ShapeClass::box:
                return true;
            case ShapeClass::sphere:
                return u[0] * u[0] + u[1] * u[1] + u[2] * u[2] <= 1.0;
            case ShapeClass::cylinder:
                return u[0] * u[0] + u[2] * u[2] <= 1.0;
            case ShapeClass::cross: {
                int central = 0;
                for (int a = 0; a < 3; ++a) {
                    const double band = std::max(1.0, ext.size[a] / 6.0);
                    central += std::abs(p[a] + 0.5 - center[a]) <= band ? 1 : 0;
                }
                return central >= 2;
            }
        }
        return false;
    };
    for (int x = 0; x < G; ++x)
        for (int y = 0; y < G; ++y)
            for (int z = 0; z < G; ++z)
                if (inside(x, y, z)) grid.at(x, y, z, 0) = 1.0;

    const Rgb top = palette()[static_cast<std::size_t>(attrs.top_color)];
    const Rgb body = palette()[static_cast<std::size_t>(attrs.body_color)];
    for (int x = 0; x < G; ++x) {
        for (int z = 0; z < G; ++z) {
            int ymin = -1, ymax = -1;
            for (int y = 0; y < G; ++y) {
                if (!grid.occupied(x, y, z)) continue;
                if (ymin < 0) ymin = y;
                ymax = y;
            }
            if (ymin < 0) continue;
            for (int y = ymin; y <= ymax; ++y) {
                if (!grid.occupied(x, y, z)) continue;
                Rgb c = body;
                if (y == ymax && ymax > ymin) {
                    c = top;
                } else if (y != ymin) {
                    const bool marked = (attrs.marking == Marking::striped && (y - ext.lo[1]) % 2 == 1) ||
                                        (attrs.marking == Marking::dotted && (x + y + z) % 3 == 0);
                    if (marked) c = {body.r * kMarkingShade, body.g * kMarkingShade, body.b * kMarkingShade};
                }
                grid.at(x, y, z, 1) = c.r;
                grid.at(x, y, z, 2) = c.g;
                grid.at(x, y, z, 3) = c.b;
            }
        }
    }
    return grid;
}

ToyAsset sample_asset(Rng& rng, int resolution) {
    if (resolution < 8 || resolution % 8 != 0) throw std::invalid_argument("grid resolution must be a multiple of 8");
    ToyAsset asset;
    asset.attrs.shape = static_cast<ShapeClass>(rng.below(kShapeCount));
    asset.attrs.size = static_cast<SizeClass>(rng.below(kSizeCount));
    asset.attrs.top_color = static_cast<int>(rng.below(kPaletteSize));
    asset.attrs.body_color = static_cast<int>(rng.below(kPaletteSize));
    asset.attrs.marking = static_cast<Marking>(rng.below(kMarkingCount));
    for (auto& j : asset.jitter) j = static_cast<int>(rng.below(3)) - 1;
    asset.grid = rasterize(asset.attrs, asset.jitter, resolution);
    return asset;
}

// ---------------------------------------------------------------- views

std::string_view view_name(View v) {
    switch (v) {
        case View::front: return "front";
        case View::top: return "top";
        case View::bottom: return "bottom";
    }
    return "?";
}

View parse_view(std::string_view name) {
    for (View v : kAllViews)
        if (view_name(v) == name) return v;
    throw std::invalid_argument("unknown view '" + std::string(name) + "' (expected front, top or bottom)");
}

Image render_grid(const VoxelGrid& grid, View view, int image_size) {
    const int G = grid.resolution();
    if (image_size <= 0 || image_size % G != 0)
        throw std::invalid_argument("image size must be a positive multiple of the grid resolution");
    const int s = image_size / G;
    Image img(image_size);
    for (int r = 0; r < G; ++r) {
        for (int col = 0; col < G; ++col) {
            const int x = col;
            int hx = -1, hy = -1, hz = -1;
            for (int depth = 0; depth < G && hx < 0; ++depth) {
                int y = 0, z = 0;
                switch (view) {
                    case View::front: y = G - 1 - r; z = depth; break;
                    case View::top: z = r; y = G - 1 - depth; break;
                    case View::bottom: z = r; y = depth; break;
                }
                if (grid.occupied(x, y, z)) hx = x, hy = y, hz = z;
            }
            if (hx < 0) continue;
            for (int dr = 0; dr < s; ++dr)
                for (int dc = 0; dc < s; ++dc) {
                    for (int c = 0; c < 3; ++c) img.at(r * s + dr, col * s + dc, c) = grid.at(hx, hy, hz, c + 1);
                    img.at(r * s + dr, col * s + dc, 3) = 1.0;
                }
        }
    }
    return img;
}

Image render_view(const ToyAsset& asset, View view, int image_size) {
    if (asset.grid.occupied_count() == 0) throw std::invalid_argument("render_view: asset has no occupied voxels");
    return render_grid(asset.grid, view, image_size);
}

// ---------------------------------------------------------------- conditions

std::array<std::int32_t, kTextTokens> text_token_ids(const Attributes& attrs) {
    check_attributes(attrs);
    return {kFieldOffsets[0] + static_cast<int>(attrs.shape), kFieldOffsets[1] + static_cast<int>(attrs.size),
            kFieldOffsets[2] + attrs.top_color, kFieldOffsets[3] + attrs.body_color,
            kFieldOffsets[4] + static_cast<int>(attrs.marking)};
}

Attributes attributes_from_tokens(const std::array<std::int32_t, kTextTokens>& ids) {
    constexpr std::array<int, kTextTokens> counts = {kShapeCount, kSizeCount, kPaletteSize, kPaletteSize, kMarkingCount};
    std::array<int, kTextTokens> v{};
    for (int f = 0; f < kTextTokens; ++f) {
        v[f] = ids[f] - kFieldOffsets[f];
        if (v[f] < 0 || v[f] >= counts[f]) throw std::invalid_argument("token id outside its field range");
    }
    return {static_cast<ShapeClass>(v[0]), static_cast<SizeClass>(v[1]), v[2], v[3], static_cast<Marking>(v[4])};
}

Tensor image_patches(const Image& image, int patch) {
    const int P = image.size();
    if (patch <= 0 || P % patch != 0) throw std::invalid_argument("patch size must divide the image size");
    const int per_side = P / patch;
    const std::size_t width = static_cast<std::size_t>(patch) * patch * 4;
    Tensor out({static_cast<std::size_t>(per_side) * per_side, width});
    for (int pr = 0; pr < per_side; ++pr)
        for (int pc = 0; pc < per_side; ++pc) {
            double* dst = out.data() + (static_cast<std::size_t>(pr) * per_side + pc) * width;
            for (int r = 0; r < patch; ++r)
                for (int c = 0; c < patch; ++c)
                    for (int ch = 0; ch < 4; ++ch) *dst++ = image.at(pr * patch + r, pc * patch + c, ch);
        }
    return out;
}

// ---------------------------------------------------------------- latent

Tensor asset_to_latent(const VoxelGrid& grid) {
    const auto G = static_cast<std::size_t>(grid.resolution());
    Tensor out({G, G, G, static_cast<std::size_t>(kChannels)});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * grid.data()[i] - 1.0;
    return out;
}

VoxelGrid latent_to_grid(const Tensor& latent) {
    const Shape& s = latent.shape();
    if (s.size() != 4 || s[0] != s[1] || s[1] != s[2] || s[3] != static_cast<std::size_t>(kChannels))
        throw ShapeError("latent must have shape [G,G,G,4], got " + shape_str(s));
    VoxelGrid grid(static_cast<int>(s[0]));
    auto& d = grid.data();
    for (std::size_t i = 0; i < d.size(); i += kChannels) {
        const bool occ = (latent[i] + 1.0) / 2.0 >= 0.5;
        d[i] = occ ? 1.0 : 0.0;
        for (int c = 1; c < kChannels; ++c)
            d[i + c] = occ ? std::clamp((latent[i + c] + 1.0) / 2.0, 0.0, 1.0) : 0.0;
    }
    return grid;
}

}  // namespace biflow::toy
