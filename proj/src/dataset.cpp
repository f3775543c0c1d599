// SPDX-License-Identifier: Apache-2.0
#include "biflow/dataset.hpp"

#include <cmath>
#include <cstdio>

#include "binio.hpp"
#include "json.hpp"

namespace biflow {

using nlohmann::json;

std::array<std::size_t, 2> Dataset::split(const std::string& name) const {
    auto it = manifest.splits.find(name);
    if (it == manifest.splits.end()) throw DataError("dataset has no split named '" + name + "'");
    return it->second;
}

std::size_t record_bytes(int grid, int image) {
    const auto g = static_cast<std::size_t>(grid);
    const auto p = static_cast<std::size_t>(image);
    return 4 * (g * g * g * toy::kChannels + 3 * p * p * 4 + toy::kTextTokens);
}

namespace {

// Records hold exactly what the float32 payload can store, so a dataset read
// back from disk equals the one generated in memory.
void round_to_f32(std::vector<double>& values) {
    for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

AssetRecord make_record(const toy::ToyAsset& asset, int image_size) {
    AssetRecord rec;
    rec.grid = asset.grid;
    round_to_f32(rec.grid.data());
    for (toy::View v : toy::kAllViews) {
        auto& img = rec.views[static_cast<std::size_t>(v)];
        img = toy::render_view(asset, v, image_size);
        round_to_f32(img.data());
    }
    rec.tokens = toy::text_token_ids(asset.attrs);
    return rec;
}

Dataset generate_dataset(const DatasetConfig& config) {
    if (config.count == 0) throw DataError("empty dataset");
    if (config.train_fraction <= 0.0 || config.train_fraction > 1.0)
        throw DataError("train_fraction must lie in (0, 1]");
    Dataset ds;
    ds.manifest.seed = config.seed;
    ds.manifest.asset_count = config.count;
    ds.manifest.grid = config.grid;
    ds.manifest.image = config.image;
    const auto n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(config.train_fraction * static_cast<double>(config.count))));
    ds.manifest.splits["train"] = {0, n_train};
    ds.manifest.splits["test"] = {n_train, config.count};
    const Rng root(config.seed);
    ds.records.reserve(config.count);
    for (std::size_t i = 0; i < config.count; ++i) {
        Rng rng = root.split(i);
        ds.records.push_back(make_record(toy::sample_asset(rng, config.grid), config.image));
    }
    return ds;
}

std::string fnv1a64_hex(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_checksum(const std::filesystem::path& file) { return fnv1a64_hex(binio::read_file(file)); }

void write_dataset(const std::filesystem::path& dir, Dataset& dataset) {
    auto& m = dataset.manifest;
    m.asset_count = dataset.records.size();
    m.record_bytes = record_bytes(m.grid, m.image);
    m.offsets.clear();
    std::vector<std::uint8_t> payload;
    payload.reserve(m.record_bytes * m.asset_count);
    for (const auto& rec : dataset.records) {
        if (rec.grid.resolution() != m.grid) throw DataError("record grid resolution differs from manifest");
        m.offsets.push_back(payload.size());
        for (double v : rec.grid.data()) binio::put_f32(payload, v);
        for (const auto& img : rec.views) {
            if (img.size() != m.image) throw DataError("record image size differs from manifest");
            for (double v : img.data()) binio::put_f32(payload, v);
        }
        for (auto t : rec.tokens) binio::put_i32(payload, t);
    }
    m.checksum = fnv1a64_hex(payload);

    json j;
    j["format_version"] = m.format_version;
    j["kind"] = m.kind;
    j["seed"] = m.seed;
    j["asset_count"] = m.asset_count;
    j["grid_resolution"] = m.grid;
    j["image_size"] = m.image;
    j["channels"] = toy::kChannels;
    j["views"] = {"front", "top", "bottom"};
    j["text_tokens"] = toy::kTextTokens;
    j["record_bytes"] = m.record_bytes;
    json splits = json::object();
    for (const auto& [name, range] : m.splits) splits[name] = {range[0], range[1]};
    j["splits"] = splits;
    j["offsets"] = m.offsets;
    if (!m.source_ids.empty()) j["source_ids"] = m.source_ids;
    j["payload_checksum"] = m.checksum;

    std::filesystem::create_directories(dir);
    binio::write_file(dir / "payload.bin", payload);
    binio::write_text(dir / "manifest.json", j.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw DataError("missing " + manifest_path.string());
    json j;
    try {
        std::ifstream in(manifest_path);
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("malformed " + manifest_path.string() + ": " + e.what());
    }
    Dataset ds;
    auto& m = ds.manifest;
    try {
        m.format_version = j.at("format_version").get<int>();
        m.kind = j.value("kind", std::string("dataset"));
        m.seed = j.at("seed").get<std::uint64_t>();
        m.asset_count = j.at("asset_count").get<std::size_t>();
        m.grid = j.at("grid_resolution").get<int>();
        m.image = j.at("image_size").get<int>();
        m.record_bytes = j.at("record_bytes").get<std::size_t>();
        for (const auto& [name, range] : j.at("splits").items())
            m.splits[name] = {range.at(0).get<std::size_t>(), range.at(1).get<std::size_t>()};
        m.offsets = j.at("offsets").get<std::vector<std::uint64_t>>();
        if (j.contains("source_ids")) m.source_ids = j.at("source_ids").get<std::vector<std::int64_t>>();
        m.checksum = j.at("payload_checksum").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError("malformed " + manifest_path.string() + ": " + e.what());
    }
    if (m.format_version != 1) throw DataError("unsupported dataset format version");
    if (m.record_bytes != record_bytes(m.grid, m.image)) throw DataError("record_bytes inconsistent with resolution");
    if (m.offsets.size() != m.asset_count) throw DataError("offset count does not match asset_count");
    for (std::size_t i = 0; i < m.offsets.size(); ++i)
        if (m.offsets[i] != i * m.record_bytes) throw DataError("offsets are not monotone record boundaries");
    if (!m.source_ids.empty() && m.source_ids.size() != m.asset_count)
        throw DataError("source_ids count does not match asset_count");

    const auto payload_path = dir / "payload.bin";
    if (!std::filesystem::exists(payload_path)) throw DataError("missing " + payload_path.string());
    const auto payload = binio::read_file(payload_path);
    if (payload.size() != m.record_bytes * m.asset_count)
        throw DataError("payload size does not match manifest counts");
    if (fnv1a64_hex(payload) != m.checksum) throw DataError("payload checksum mismatch");

    const auto G = static_cast<std::size_t>(m.grid);
    const auto P = static_cast<std::size_t>(m.image);
    ds.records.resize(m.asset_count);
    for (std::size_t i = 0; i < m.asset_count; ++i) {
        const std::uint8_t* p = payload.data() + m.offsets[i];
        auto& rec = ds.records[i];
        rec.grid = toy::VoxelGrid(m.grid);
        for (std::size_t k = 0; k < G * G * G * toy::kChannels; ++k, p += 4) rec.grid.data()[k] = binio::get_f32(p);
        for (auto& img : rec.views) {
            img = toy::Image(m.image);
            for (std::size_t k = 0; k < P * P * 4; ++k, p += 4) img.data()[k] = binio::get_f32(p);
        }
        for (auto& t : rec.tokens) {
            t = binio::get_i32(p);
            p += 4;
        }
    }
    return ds;
}

}  // namespace biflow
