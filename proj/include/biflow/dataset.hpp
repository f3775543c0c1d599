// SPDX-License-Identifier: Apache-2.0
//
// Dataset file pair:
//   manifest.json  UTF-8 manifest (seed, counts, resolution, splits, offsets)
//   payload.bin    per record, little-endian: G^3*4 float32 grid values, then
//                  front/top/bottom renders (P*P*4 float32 each), then five
//                  int32 text-token ids (-1 when a record has no text).
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "biflow/toy_world.hpp"

namespace biflow {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetConfig {
    std::uint64_t seed = 0;
    std::size_t count = 1000;
    int grid = 8;
    int image = 16;
    double train_fraction = 0.9;
};

struct AssetRecord {
    toy::VoxelGrid grid;
    std::array<toy::Image, 3> views;  // indexed by toy::View
    std::array<std::int32_t, toy::kTextTokens> tokens{-1, -1, -1, -1, -1};

    const toy::Image& view(toy::View v) const { return views[static_cast<std::size_t>(v)]; }
    bool has_text() const { return tokens[0] >= 0; }
};

struct DatasetManifest {
    int format_version = 1;
    std::string kind = "dataset";  // "dataset" or "generated"
    std::uint64_t seed = 0;
    std::size_t asset_count = 0;
    int grid = 8;
    int image = 16;
    std::size_t record_bytes = 0;
    std::map<std::string, std::array<std::size_t, 2>> splits;
    std::vector<std::uint64_t> offsets;
    std::vector<std::int64_t> source_ids;  // generated sets: ground-truth asset per record
    std::string checksum;                  // FNV-1a 64 of payload.bin, hex
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<AssetRecord> records;

    std::array<std::size_t, 2> split(const std::string& name) const;
};

std::size_t record_bytes(int grid, int image);

/// Asset i is drawn from Rng(seed).split(i); a pure function of the config.
/// Values are rounded to float32 so they survive the payload unchanged.
Dataset generate_dataset(const DatasetConfig& config);

AssetRecord make_record(const toy::ToyAsset& asset, int image_size);

/// Fills offsets, record size and checksum, then writes both files.
void write_dataset(const std::filesystem::path& dir, Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

std::string fnv1a64_hex(const std::vector<std::uint8_t>& bytes);
std::string file_checksum(const std::filesystem::path& file);

}  // namespace biflow
