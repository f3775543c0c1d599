// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>
#include <set>

#include "biflow/dataset.hpp"
#include "biflow/toy_world.hpp"
#include "doctest.h"

using namespace biflow;
using namespace biflow::toy;

namespace {

constexpr int G = 8;
constexpr int P = 16;

// Independent ray march: first occupied voxel from the given side, by column (x, z).
std::array<double, 3> first_hit_from_above(const VoxelGrid& g, int x, int z, bool from_top, bool* hit) {
    for (int i = 0; i < g.resolution(); ++i) {
        const int y = from_top ? g.resolution() - 1 - i : i;
        if (g.at(x, y, z, 0) == 1.0) {
            *hit = true;
            return {g.at(x, y, z, 1), g.at(x, y, z, 2), g.at(x, y, z, 3)};
        }
    }
    *hit = false;
    return {0, 0, 0};
}

std::array<double, 3> rgb(int palette_index) {
    const Rgb c = palette()[static_cast<std::size_t>(palette_index)];
    return {c.r, c.g, c.b};
}

std::set<std::array<double, 3>> visible_colors(const Image& img) {
    std::set<std::array<double, 3>> out;
    for (int r = 0; r < img.size(); ++r)
        for (int c = 0; c < img.size(); ++c)
            if (img.at(r, c, 3) == 1.0) out.insert({img.at(r, c, 0), img.at(r, c, 1), img.at(r, c, 2)});
    return out;
}

double silhouette_area(const Image& img) {
    double a = 0;
    for (int r = 0; r < img.size(); ++r)
        for (int c = 0; c < img.size(); ++c) a += img.at(r, c, 3);
    return a;
}

}  // namespace

TEST_CASE("sampling is deterministic per seed") {
    Rng a(0), b(0);
    const ToyAsset x = sample_asset(a, G), y = sample_asset(b, G);
    CHECK(x.attrs == y.attrs);
    CHECK(x.jitter == y.jitter);
    CHECK(x.grid == y.grid);
}

TEST_CASE("sampled assets satisfy the grid invariants") {
    const Rng root(21);
    for (std::uint64_t i = 0; i < 300; ++i) {
        Rng rng = root.split(i);
        const ToyAsset a = sample_asset(rng, G);
        CHECK(a.grid.occupied_count() > 0);
        for (int x = 0; x < G; ++x)
            for (int y = 0; y < G; ++y)
                for (int z = 0; z < G; ++z) {
                    const double occ = a.grid.at(x, y, z, 0);
                    REQUIRE((occ == 0.0 || occ == 1.0));
                    for (int c = 1; c < 4; ++c) {
                        if (occ == 0.0) REQUIRE(a.grid.at(x, y, z, c) == 0.0);
                        REQUIRE(a.grid.at(x, y, z, c) >= 0.0);
                        REQUIRE(a.grid.at(x, y, z, c) <= 1.0);
                    }
                }
        for (int j : a.jitter) CHECK((j >= -1 && j <= 1));
    }
}

TEST_CASE("attributes are drawn uniformly") {
    const Rng root(5);
    std::array<int, kShapeCount> shapes{};
    std::array<int, kPaletteSize> tops{};
    const int n = 12000;
    for (int i = 0; i < n; ++i) {
        Rng rng = root.split(static_cast<std::uint64_t>(i));
        const ToyAsset a = sample_asset(rng, G);
        ++shapes[static_cast<std::size_t>(a.attrs.shape)];
        ++tops[static_cast<std::size_t>(a.attrs.top_color)];
    }
    for (int s : shapes) CHECK(std::abs(s - n / kShapeCount) < 200);  // ~4.2 sigma
    for (int t : tops) CHECK(std::abs(t - n / kPaletteSize) < 170);   // ~4.2 sigma
}

TEST_CASE("large boxes span at least 0.7 G on every axis") {
    // Enumerate the extent rule over every jitter combination.
    for (int jx = -1; jx <= 1; ++jx)
        for (int jy = -1; jy <= 1; ++jy)
            for (int jz = -1; jz <= 1; ++jz) {
                Attributes at;
                at.shape = ShapeClass::box;
                at.size = SizeClass::large;
                const VoxelGrid g = rasterize(at, {jx, jy, jz}, G);
                std::array<int, 3> lo{G, G, G}, hi{-1, -1, -1};
                for (int x = 0; x < G; ++x)
                    for (int y = 0; y < G; ++y)
                        for (int z = 0; z < G; ++z) {
                            if (!g.occupied(x, y, z)) continue;
                            const std::array<int, 3> p{x, y, z};
                            for (int a = 0; a < 3; ++a) {
                                lo[a] = std::min(lo[a], p[a]);
                                hi[a] = std::max(hi[a], p[a]);
                            }
                        }
                for (int a = 0; a < 3; ++a) CHECK(hi[a] - lo[a] + 1 >= 0.7 * G);
            }
}

TEST_CASE("jitter-free spheres are symmetric under the three axis reflections") {
    for (int res : {8, 16})
        for (int s = 0; s < kSizeCount; ++s) {
            Attributes at;
            at.shape = ShapeClass::sphere;
            at.size = static_cast<SizeClass>(s);
            const VoxelGrid g = rasterize(at, {0, 0, 0}, res);
            for (int x = 0; x < res; ++x)
                for (int y = 0; y < res; ++y)
                    for (int z = 0; z < res; ++z) {
                        const bool o = g.occupied(x, y, z);
                        REQUIRE(o == g.occupied(res - 1 - x, y, z));
                        REQUIRE(o == g.occupied(x, res - 1 - y, z));
                        REQUIRE(o == g.occupied(x, y, res - 1 - z));
                    }
        }
}

TEST_CASE("fully occupied cube gives a full silhouette from every view") {
    VoxelGrid g(G);
    for (int x = 0; x < G; ++x)
        for (int y = 0; y < G; ++y)
            for (int z = 0; z < G; ++z) g.at(x, y, z, 0) = 1.0;
    for (View v : kAllViews) CHECK(silhouette_area(render_grid(g, v, P)) == P * P);
}

TEST_CASE("a single center voxel lights exactly one pixel block") {
    VoxelGrid g(G);
    g.at(4, 4, 4, 0) = 1.0;
    g.at(4, 4, 4, 1) = 0.3;
    for (View v : kAllViews) {
        const Image img = render_grid(g, v, P);
        CHECK(silhouette_area(img) == (P / G) * (P / G));
    }
    CHECK(render_grid(g, View::front, P).at(2 * (G - 1 - 4), 2 * 4, 3) == 1.0);
}

TEST_CASE("empty assets cannot be rendered") {
    ToyAsset a;
    a.grid = VoxelGrid(G);
    CHECK_THROWS_AS(render_view(a, View::front, P), std::invalid_argument);
}

TEST_CASE("top view shows the top color and bottom view the body color") {
    for (int s = 0; s < kShapeCount; ++s) {
        Attributes at;
        at.shape = static_cast<ShapeClass>(s);
        at.size = SizeClass::large;
        at.top_color = 0;
        at.body_color = 2;
        at.marking = Marking::striped;
        ToyAsset a{at, {0, 0, 0}, rasterize(at, {0, 0, 0}, G)};
        // Brute-force oracle over columns.
        int top_hits = 0, top_total = 0, bottom_body = 0, bottom_total = 0;
        for (int x = 0; x < G; ++x)
            for (int z = 0; z < G; ++z) {
                bool hit = false;
                auto c = first_hit_from_above(a.grid, x, z, true, &hit);
                if (hit) {
                    ++top_total;
                    top_hits += c == rgb(at.top_color) ? 1 : 0;
                }
                c = first_hit_from_above(a.grid, x, z, false, &hit);
                if (hit) {
                    ++bottom_total;
                    bottom_body += c == rgb(at.body_color) ? 1 : 0;
                }
            }
        CHECK(2 * top_hits > top_total);
        CHECK(bottom_body == bottom_total);
        // The renderer agrees with the oracle pixel for pixel.
        const Image top = render_view(a, View::top, P), bottom = render_view(a, View::bottom, P);
        for (int x = 0; x < G; ++x)
            for (int z = 0; z < G; ++z) {
                bool hit = false;
                auto c = first_hit_from_above(a.grid, x, z, true, &hit);
                CHECK(top.at(2 * z, 2 * x, 3) == (hit ? 1.0 : 0.0));
                if (hit) CHECK(std::array<double, 3>{top.at(2 * z, 2 * x, 0), top.at(2 * z, 2 * x, 1), top.at(2 * z, 2 * x, 2)} == c);
                c = first_hit_from_above(a.grid, x, z, false, &hit);
                if (hit) CHECK(std::array<double, 3>{bottom.at(2 * z, 2 * x, 0), bottom.at(2 * z, 2 * x, 1), bottom.at(2 * z, 2 * x, 2)} == c);
            }
    }
}

TEST_CASE("the bottom view hides top color and marking") {
    const Rng root(8);
    for (std::uint64_t i = 0; i < 500; ++i) {
        Rng rng = root.split(i);
        const ToyAsset a = sample_asset(rng, G);
        const Image bottom = render_view(a, View::bottom, P);
        const Image front = render_view(a, View::front, P);
        const auto colors = visible_colors(bottom);
        REQUIRE(colors.size() == 1);
        CHECK(*colors.begin() == rgb(a.attrs.body_color));
        CHECK(silhouette_area(front) >= static_cast<double>(colors.size()));
        CHECK(visible_colors(front).size() >= colors.size());
    }
}

TEST_CASE("text tokens follow the field-major layout") {
    CHECK(text_token_ids(parse_attributes("box,small,red,red,plain")) == std::array<std::int32_t, 5>{0, 4, 7, 13, 19});
    CHECK(text_token_ids(parse_attributes("cross,large,white,white,dotted")) ==
          std::array<std::int32_t, 5>{3, 6, 12, 18, 21});
    CHECK_THROWS_AS(parse_attributes("box,small,red,red,zigzag"), std::invalid_argument);
    CHECK_THROWS_AS(parse_attributes("box,small,red"), std::invalid_argument);
}

TEST_CASE("text tokens are injective and differ only where attributes differ") {
    std::set<std::array<std::int32_t, 5>> seen;
    for (int s = 0; s < kShapeCount; ++s)
        for (int z = 0; z < kSizeCount; ++z)
            for (int t = 0; t < kPaletteSize; ++t)
                for (int b = 0; b < kPaletteSize; ++b)
                    for (int m = 0; m < kMarkingCount; ++m) {
                        Attributes a{static_cast<ShapeClass>(s), static_cast<SizeClass>(z), t, b, static_cast<Marking>(m)};
                        const auto ids = text_token_ids(a);
                        CHECK(attributes_from_tokens(ids) == a);
                        seen.insert(ids);
                        for (auto id : ids) CHECK((id >= 0 && id < kVocabSize));
                        Attributes other = a;
                        other.marking = static_cast<Marking>((m + 1) % kMarkingCount);
                        const auto ids2 = text_token_ids(other);
                        int diff = 0;
                        for (int k = 0; k < 5; ++k) diff += ids[k] != ids2[k] ? 1 : 0;
                        CHECK(diff == 1);
                    }
    CHECK(seen.size() == 4u * 3 * 6 * 6 * 3);
    CHECK(text_token_ids(parse_attributes("sphere,medium,blue,green,striped")) ==
          text_token_ids(parse_attributes("sphere,medium,blue,green,striped")));
}

TEST_CASE("image patches are local") {
    Rng rng(2);
    Image img(P);
    for (auto& v : img.data()) v = rng.uniform();
    const Tensor t = image_patches(img, 4);
    CHECK(t.shape() == Shape{16, 64});
    // Swap patch (0,0) with patch (2,3) in pixel space.
    Image swapped = img;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            for (int ch = 0; ch < 4; ++ch) std::swap(swapped.at(r, c, ch), swapped.at(8 + r, 12 + c, ch));
    const Tensor u = image_patches(swapped, 4);
    for (std::size_t row = 0; row < 16; ++row) {
        const std::size_t src = row == 0 ? 11 : row == 11 ? 0 : row;
        for (std::size_t j = 0; j < 64; ++j) REQUIRE(u[row * 64 + j] == t[src * 64 + j]);
    }
}

TEST_CASE("latent round trip and decode rules") {
    const Rng root(13);
    for (std::uint64_t i = 0; i < 100; ++i) {
        Rng rng = root.split(i);
        const ToyAsset a = sample_asset(rng, G);
        const VoxelGrid back = latent_to_grid(asset_to_latent(a.grid));
        for (std::size_t k = 0; k < back.data().size(); k += 4) {
            REQUIRE(back.data()[k] == a.grid.data()[k]);
            for (int c = 1; c < 4; ++c) REQUIRE(std::abs(back.data()[k + c] - a.grid.data()[k + c]) < 1e-6);
        }
    }
    SUBCASE("zero latent sits on the threshold midpoint and decodes as occupied gray") {
        const VoxelGrid g = latent_to_grid(Tensor({G, G, G, 4}, 0.0));
        CHECK(g.occupied_count() == static_cast<std::size_t>(G * G * G));
        CHECK(g.at(1, 2, 3, 2) == 0.5);
    }
    SUBCASE("out-of-range colors are clamped") {
        Tensor l({G, G, G, 4}, 3.0);
        l[1] = -7.0;
        const VoxelGrid g = latent_to_grid(l);
        CHECK(g.data()[1] == 0.0);
        CHECK(g.data()[2] == 1.0);
    }
    SUBCASE("colors vanish on empty voxels") {
        Tensor l({G, G, G, 4}, 0.9);
        l[0] = -0.5;
        CHECK(latent_to_grid(l).data()[1] == 0.0);
    }
}

TEST_CASE("dataset generation is a pure function of the config") {
    DatasetConfig cfg;
    cfg.seed = 3;
    cfg.count = 20;
    Dataset a = generate_dataset(cfg), b = generate_dataset(cfg);
    const auto dir = std::filesystem::temp_directory_path() / "biflow_test_ds";
    std::filesystem::remove_all(dir);
    write_dataset(dir / "a", a);
    write_dataset(dir / "b", b);
    CHECK(file_checksum(dir / "a" / "payload.bin") == file_checksum(dir / "b" / "payload.bin"));
    CHECK(file_checksum(dir / "a" / "manifest.json") == file_checksum(dir / "b" / "manifest.json"));

    const Dataset back = read_dataset(dir / "a");
    REQUIRE(back.records.size() == 20);
    CHECK(back.split("train") == std::array<std::size_t, 2>{0, 18});
    CHECK(back.split("test") == std::array<std::size_t, 2>{18, 20});
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(back.records[i].grid == a.records[i].grid);
        CHECK(back.records[i].tokens == a.records[i].tokens);
        for (std::size_t v = 0; v < 3; ++v) CHECK(back.records[i].views[v] == a.records[i].views[v]);
    }

    SUBCASE("corruption is detected") {
        auto bytes = std::filesystem::file_size(dir / "a" / "payload.bin");
        std::filesystem::resize_file(dir / "a" / "payload.bin", bytes - 4);
        CHECK_THROWS_AS(read_dataset(dir / "a"), DataError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("an empty dataset is rejected") {
    DatasetConfig cfg;
    cfg.count = 0;
    CHECK_THROWS_WITH_AS(generate_dataset(cfg), "empty dataset", DataError);
}
