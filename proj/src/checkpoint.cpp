// SPDX-License-Identifier: Apache-2.0
#include "biflow/checkpoint.hpp"

#include <fstream>

#include "binio.hpp"
#include "json.hpp"

namespace biflow::ckpt {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
constexpr char kResumeMagic[4] = {'B', 'F', 'R', 'S'};

json model_json(const dual::ModelConfig& m) {
    return {{"grid_resolution", m.grid}, {"image_size", m.image},   {"image_patch", m.image_patch},
            {"depth", m.depth},          {"width", m.width},        {"heads", m.heads},
            {"mlp_ratio", m.mlp_ratio},  {"time_features", m.time_features}, {"voxel_patch", m.voxel_patch()},
            {"tokens", m.tokens()},      {"token_channels", m.token_channels()}};
}

dual::ModelConfig model_from(const json& j) {
    dual::ModelConfig m;
    m.grid = j.at("grid_resolution").get<int>();
    m.image = j.at("image_size").get<int>();
    m.image_patch = j.at("image_patch").get<int>();
    m.depth = j.at("depth").get<int>();
    m.width = j.at("width").get<int>();
    m.heads = j.at("heads").get<int>();
    m.mlp_ratio = j.at("mlp_ratio").get<int>();
    m.time_features = j.at("time_features").get<int>();
    m.validate();
    return m;
}

}  // namespace

std::string save(const std::filesystem::path& dir, const ad::ParamStore& store, const CheckpointInfo& info) {
    json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = info.kind;
    j["model"] = model_json(info.model);
    if (info.kind == "branch") {
        j["modality"] = dual::modality_name(info.modality);
    } else {
        j["branches"] = {{"image", "img."}, {"second", "txt."}};
        j["second_branch"] = dual::modality_name(info.second_branch);
        j["bridges"] = "bridge.";
        j["fusion"] = info.fusion ? json(dual::fusion_name(*info.fusion)) : json(nullptr);
        j["at_residual"] = info.at_residual;
    }
    j["step"] = info.step;
    j["config_fingerprint"] = info.config_fingerprint;
    j["dataset_checksum"] = info.dataset_checksum;

    std::vector<std::uint8_t> payload;
    payload.reserve(store.total_elements() * 4);
    json params = json::array();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const Tensor& t = store.value(store.id(i));
        params.push_back({{"name", store.name(store.id(i))}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
        for (double v : t.values()) binio::put_f32(payload, v);
        offset += t.size();
    }
    j["params"] = std::move(params);
    j["total_elements"] = offset;
    const std::string checksum = fnv1a64_hex(payload);
    j["payload_checksum"] = checksum;

    std::filesystem::create_directories(dir);
    binio::write_file(dir / "ckpt.bin", payload);
    binio::write_text(dir / "ckpt.json", j.dump(2) + "\n");
    return checksum;
}

Checkpoint load(const std::filesystem::path& dir) {
    const auto manifest = dir / "ckpt.json";
    const auto payload_path = dir / "ckpt.bin";
    if (!std::filesystem::exists(manifest)) throw CheckpointError("missing checkpoint " + manifest.string());
    if (!std::filesystem::exists(payload_path)) throw CheckpointError("missing checkpoint " + payload_path.string());
    Checkpoint ck;
    std::vector<std::tuple<std::string, Shape, std::size_t, std::size_t>> entries;
    try {
        std::ifstream in(manifest);
        const json j = json::parse(in);
        if (j.at("format_version").get<int>() != kFormatVersion)
            throw CheckpointError("unsupported checkpoint format version in " + manifest.string());
        auto& info = ck.info;
        info.kind = j.at("kind").get<std::string>();
        if (info.kind != "branch" && info.kind != "bundle")
            throw CheckpointError("unknown checkpoint kind '" + info.kind + "'");
        info.model = model_from(j.at("model"));
        if (info.kind == "branch") {
            info.modality = dual::parse_modality(j.at("modality").get<std::string>());
        } else {
            info.second_branch = dual::parse_modality(j.value("second_branch", std::string("text")));
            if (!j.at("fusion").is_null()) info.fusion = dual::parse_fusion(j.at("fusion").get<std::string>());
            info.at_residual = j.value("at_residual", false);
        }
        info.step = j.value("step", std::uint64_t{0});
        info.config_fingerprint = j.value("config_fingerprint", std::string());
        info.dataset_checksum = j.value("dataset_checksum", std::string());
        ck.checksum = j.at("payload_checksum").get<std::string>();
        for (const auto& p : j.at("params"))
            entries.emplace_back(p.at("name").get<std::string>(), p.at("shape").get<Shape>(),
                                 p.at("offset").get<std::size_t>(), p.at("count").get<std::size_t>());
    } catch (const json::exception& e) {
        throw CheckpointError("malformed " + manifest.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError("malformed " + manifest.string() + ": " + e.what());
    }
    const auto payload = binio::read_file(payload_path);
    if (fnv1a64_hex(payload) != ck.checksum) throw CheckpointError("checkpoint payload checksum mismatch in " + dir.string());
    for (auto& [name, shape, offset, count] : entries) {
        if (numel(shape) != count || (offset + count) * 4 > payload.size())
            throw CheckpointError("checkpoint entry '" + name + "' is inconsistent with the payload");
        Tensor t(shape);
        const std::uint8_t* p = payload.data() + offset * 4;
        for (std::size_t i = 0; i < count; ++i) t[i] = binio::get_f32(p + 4 * i);
        ck.params.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

void apply(const Checkpoint& ckpt, ad::ParamStore& store) {
    if (ckpt.params.size() != store.size())
        throw CheckpointError("checkpoint has " + std::to_string(ckpt.params.size()) + " tensors, model expects " +
                              std::to_string(store.size()));
    for (const auto& [name, t] : ckpt.params) {
        auto id = store.find(name);
        if (!id) throw CheckpointError("checkpoint tensor '" + name + "' is not a model parameter");
        if (store.value(*id).shape() != t.shape())
            throw CheckpointError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                                  shape_str(store.value(*id).shape()));
        store.value(*id) = t;
    }
}

dual::BranchModel make_branch_model(const Checkpoint& ckpt) {
    if (ckpt.info.kind != "branch") throw CheckpointError("expected a branch checkpoint, found " + ckpt.info.kind);
    Rng init(0);
    dual::BranchModel m(ckpt.info.model, ckpt.info.modality, init);
    apply(ckpt, m.params());
    return m;
}

dual::Bundle make_bundle(const Checkpoint& ckpt) {
    if (ckpt.info.kind != "bundle") throw CheckpointError("expected a bundle checkpoint, found " + ckpt.info.kind);
    Rng init(0);
    dual::Bundle b(ckpt.info.model, init, ckpt.info.fusion, ckpt.info.at_residual, ckpt.info.second_branch);
    apply(ckpt, b.params());
    return b;
}

void save_resume(const std::filesystem::path& file, const ad::ParamStore& store, const ResumeState& state) {
    std::vector<std::uint8_t> out(kResumeMagic, kResumeMagic + 4);
    binio::put_i32(out, 1);
    binio::put_f64(out, static_cast<double>(state.step));
    binio::put_i32(out, static_cast<std::int32_t>(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto id = store.id(i);
        const std::string& name = store.name(id);
        binio::put_i32(out, static_cast<std::int32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        const Tensor& p = store.value(id);
        binio::put_i32(out, static_cast<std::int32_t>(p.size()));
        for (const auto* src : {&p, &state.m.at(i), &state.v.at(i)})
            for (double v : src->values()) binio::put_f64(out, v);
    }
    binio::write_file(file, out);
}

ResumeState load_resume(const std::filesystem::path& file, ad::ParamStore& store) {
    if (!std::filesystem::exists(file)) throw CheckpointError("missing resume state " + file.string());
    const auto bytes = binio::read_file(file);
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (pos + n > bytes.size()) throw CheckpointError("truncated resume state " + file.string());
    };
    need(4 + 4 + 8 + 4);
    if (!std::equal(kResumeMagic, kResumeMagic + 4, bytes.begin())) throw CheckpointError("not a resume file: " + file.string());
    pos = 4;
    if (binio::get_i32(bytes.data() + pos) != 1) throw CheckpointError("unsupported resume version");
    pos += 4;
    ResumeState st;
    st.step = static_cast<std::uint64_t>(binio::get_f64(bytes.data() + pos));
    pos += 8;
    const auto count = static_cast<std::size_t>(binio::get_i32(bytes.data() + pos));
    pos += 4;
    if (count != store.size()) throw CheckpointError("resume state parameter count differs from the model");
    for (std::size_t i = 0; i < count; ++i) {
        need(4);
        const auto len = static_cast<std::size_t>(binio::get_i32(bytes.data() + pos));
        pos += 4;
        need(len + 4);
        const std::string name(bytes.begin() + static_cast<long>(pos), bytes.begin() + static_cast<long>(pos + len));
        pos += len;
        if (name != store.name(store.id(i))) throw CheckpointError("resume state tensor '" + name + "' out of order");
        const auto n = static_cast<std::size_t>(binio::get_i32(bytes.data() + pos));
        pos += 4;
        Tensor& p = store.value(store.id(i));
        if (n != p.size()) throw CheckpointError("resume state tensor '" + name + "' has the wrong size");
        need(3 * 8 * n);
        Tensor m(p.shape()), v(p.shape());
        for (Tensor* dst : {&p, &m, &v})
            for (std::size_t k = 0; k < n; ++k, pos += 8) (*dst)[k] = binio::get_f64(bytes.data() + pos);
        st.m.push_back(std::move(m));
        st.v.push_back(std::move(v));
    }
    return st;
}

}  // namespace biflow::ckpt
