// SPDX-License-Identifier: Apache-2.0
#include "biflow/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#ifndef BIFLOW_VERSION
#define BIFLOW_VERSION "0.1.0"
#endif

namespace biflow {

using nlohmann::ordered_json;

RunConfig::RunConfig() {
    pretrain.stage = train::Stage::pretrain_img;
    pretrain.steps = 20000;
    pretrain.batch = 32;
    pretrain.adam.lr = 1e-3;
    finetune.stage = train::Stage::joint;
    finetune.steps = 5000;
    finetune.batch = 32;
    finetune.adam.lr = 1e-4;
}

void RunConfig::validate() const {
    try {
        model.validate();
        pretrain.validate();
        finetune.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (data.grid != model.grid) throw ConfigError("data.grid_resolution must equal model.grid_resolution");
    if (data.image != model.image) throw ConfigError("data.image_size must equal model.image_size");
    if (data.grid < 8 || data.grid % 8 != 0) throw ConfigError("data.grid_resolution must be a positive multiple of 8");
    if (data.image % 4 != 0) throw ConfigError("data.image_size must be a multiple of 4");
    if (!(data.train_fraction > 0.0 && data.train_fraction <= 1.0)) throw ConfigError("data.train_fraction must lie in (0, 1]");
    if (sample.steps < 1) throw ConfigError("sample.steps must be >= 1");
    if (!(sample.guidance >= 0.0) || !std::isfinite(sample.guidance)) throw ConfigError("sample.guidance must be finite and >= 0");
    if (sample.count < 1) throw ConfigError("sample.count must be >= 1");
    if (diagnose.assets < 2) throw ConfigError("diagnose.assets must be >= 2");
}

namespace {

void reject_unknown(const ordered_json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw ConfigError("unknown field '" + (where.empty() ? key : where + "." + key) + "'");
}

template <class T>
void read(const ordered_json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("field '" + where + "." + key + "' has the wrong type");
    }
}

template <class Enum, class Parse>
void read_enum(const ordered_json& j, const char* key, Enum& out, const std::string& where, Parse parse) {
    if (!j.contains(key)) return;
    std::string s;
    read(j, key, s, where);
    try {
        out = parse(s);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("field '" + where + "." + key + "': " + e.what());
    }
}

flow::TimeSampling parse_time(const std::string& s) {
    if (s == "uniform") return flow::TimeSampling::uniform;
    if (s == "logit_normal") return flow::TimeSampling::logit_normal;
    throw std::invalid_argument("expected uniform or logit_normal");
}

std::string time_name(flow::TimeSampling t) { return t == flow::TimeSampling::uniform ? "uniform" : "logit_normal"; }

const std::set<std::string> kTrainFields = {"steps", "batch", "lr", "dropout", "log_every", "checkpoint_every",
                                            "beta1", "beta2", "eps", "clip_norm", "time_sampling", "threads"};

void read_train(const ordered_json& j, const std::string& where, train::TrainConfig& t,
                const std::set<std::string>& extra) {
    std::set<std::string> allowed = kTrainFields;
    allowed.insert(extra.begin(), extra.end());
    reject_unknown(j, where, allowed);
    read(j, "steps", t.steps, where);
    read(j, "batch", t.batch, where);
    read(j, "lr", t.adam.lr, where);
    read(j, "dropout", t.dropout, where);
    read(j, "log_every", t.log_every, where);
    read(j, "checkpoint_every", t.checkpoint_every, where);
    read(j, "beta1", t.adam.beta1, where);
    read(j, "beta2", t.adam.beta2, where);
    read(j, "eps", t.adam.eps, where);
    read(j, "clip_norm", t.adam.clip_norm, where);
    read(j, "threads", t.threads, where);
    read_enum(j, "time_sampling", t.time, where, parse_time);
}

ordered_json train_json(const train::TrainConfig& t) {
    return {{"steps", t.steps},       {"batch", t.batch},
            {"lr", t.adam.lr},        {"dropout", t.dropout},
            {"log_every", t.log_every}, {"checkpoint_every", t.checkpoint_every},
            {"beta1", t.adam.beta1},  {"beta2", t.adam.beta2},
            {"eps", t.adam.eps},      {"clip_norm", t.adam.clip_norm},
            {"time_sampling", time_name(t.time)}, {"threads", t.threads}};
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    reject_unknown(j, "", {"seed", "data", "model", "pretrain", "finetune", "sample", "eval", "diagnose"});
    read(j, "seed", c.seed, "");
    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d, "data", {"count", "grid_resolution", "image_size", "train_fraction"});
        read(d, "count", c.data.count, "data");
        read(d, "grid_resolution", c.data.grid, "data");
        read(d, "image_size", c.data.image, "data");
        read(d, "train_fraction", c.data.train_fraction, "data");
    }
    // The model follows the data resolution unless set explicitly.
    c.model.grid = c.data.grid;
    c.model.image = c.data.image;
    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown(m, "model", {"grid_resolution", "image_size", "image_patch", "depth", "width", "heads", "mlp_ratio",
                                    "time_features", "at_residual"});
        read(m, "grid_resolution", c.model.grid, "model");
        read(m, "image_size", c.model.image, "model");
        read(m, "image_patch", c.model.image_patch, "model");
        read(m, "depth", c.model.depth, "model");
        read(m, "width", c.model.width, "model");
        read(m, "heads", c.model.heads, "model");
        read(m, "mlp_ratio", c.model.mlp_ratio, "model");
        read(m, "time_features", c.model.time_features, "model");
        read(m, "at_residual", c.at_residual, "model");
    }
    if (j.contains("pretrain")) read_train(j.at("pretrain"), "pretrain", c.pretrain, {});
    if (j.contains("finetune")) {
        const auto& f = j.at("finetune");
        read_train(f, "finetune", c.finetune, {"strategy", "freeze_branches"});
        read_enum(f, "strategy", c.finetune.strategy, "finetune", dual::parse_fusion);
        read(f, "freeze_branches", c.finetune.freeze_branches, "finetune");
    }
    if (j.contains("sample")) {
        const auto& s = j.at("sample");
        reject_unknown(s, "sample", {"steps", "guidance", "strategy", "count"});
        read(s, "steps", c.sample.steps, "sample");
        read(s, "guidance", c.sample.guidance, "sample");
        read_enum(s, "strategy", c.sample.strategy, "sample", dual::parse_fusion);
        read(s, "count", c.sample.count, "sample");
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown(e, "eval", {"extractor_seed"});
        read(e, "extractor_seed", c.eval.extractor_seed, "eval");
    }
    if (j.contains("diagnose")) {
        const auto& d = j.at("diagnose");
        reject_unknown(d, "diagnose", {"assets", "split"});
        read(d, "assets", c.diagnose.assets, "diagnose");
        read(d, "split", c.diagnose.split, "diagnose");
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string resolved_json(const RunConfig& c) {
    ordered_json j;
    j["seed"] = c.seed;
    j["data"] = {{"count", c.data.count},
                 {"grid_resolution", c.data.grid},
                 {"image_size", c.data.image},
                 {"train_fraction", c.data.train_fraction}};
    j["model"] = {{"grid_resolution", c.model.grid}, {"image_size", c.model.image}, {"image_patch", c.model.image_patch},
                  {"depth", c.model.depth},          {"width", c.model.width},      {"heads", c.model.heads},
                  {"mlp_ratio", c.model.mlp_ratio},  {"time_features", c.model.time_features},
                  {"at_residual", c.at_residual}};
    j["pretrain"] = train_json(c.pretrain);
    auto ft = train_json(c.finetune);
    ft["strategy"] = dual::fusion_name(c.finetune.strategy);
    ft["freeze_branches"] = c.finetune.freeze_branches;
    j["finetune"] = ft;
    j["sample"] = {{"steps", c.sample.steps},
                   {"guidance", c.sample.guidance},
                   {"strategy", dual::fusion_name(c.sample.strategy)},
                   {"count", c.sample.count}};
    j["eval"] = {{"extractor_seed", c.eval.extractor_seed}};
    j["diagnose"] = {{"assets", c.diagnose.assets}, {"split", c.diagnose.split}};
    return j.dump(2) + "\n";
}

std::string config_fingerprint(const RunConfig& config) {
    const std::string s = resolved_json(config);
    return fnv1a64_hex(std::vector<std::uint8_t>(s.begin(), s.end()));
}

std::string version_string() { return BIFLOW_VERSION; }

}  // namespace biflow
