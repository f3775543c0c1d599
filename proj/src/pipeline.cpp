// SPDX-License-Identifier: Apache-2.0
#include "biflow/pipeline.hpp"

#include "binio.hpp"

namespace biflow::pipeline {

Tensor generate_latent(const dual::Bundle& bundle, const dual::ConditionInputs& inputs, Regime regime,
                       const SampleSettings& settings, Rng& rng, std::vector<Tensor>* trajectory) {
    const auto& cfg = bundle.config();
    const auto G = static_cast<std::size_t>(cfg.grid);
    flow::VelocityOracle oracle = [&](const Tensor& z, double t, Regime r) {
        return dual::bundle_velocity(bundle, z, t, inputs, r, settings.strategy);
    };
    return flow::sample(oracle, flow::FlowSchedule::uniform(settings.steps), flow::GuidanceConfig{settings.guidance}, rng,
                        {G, G, G, static_cast<std::size_t>(toy::kChannels)}, regime, trajectory);
}

AssetRecord record_from_latent(const Tensor& latent, int image_size,
                               const std::array<std::int32_t, toy::kTextTokens>& tokens) {
    AssetRecord rec;
    rec.grid = toy::latent_to_grid(latent);
    for (auto& v : rec.grid.data()) v = static_cast<double>(static_cast<float>(v));
    rec.views = metrics::render_views(rec.grid, image_size);
    for (auto& img : rec.views)
        for (auto& v : img.data()) v = static_cast<double>(static_cast<float>(v));
    rec.tokens = tokens;
    return rec;
}

Dataset generated_dataset(std::vector<AssetRecord> records, std::vector<std::int64_t> source_ids, std::uint64_t seed,
                          int grid, int image) {
    Dataset ds;
    ds.manifest.kind = "generated";
    ds.manifest.seed = seed;
    ds.manifest.grid = grid;
    ds.manifest.image = image;
    ds.manifest.asset_count = records.size();
    ds.manifest.splits["all"] = {0, records.size()};
    ds.manifest.source_ids = std::move(source_ids);
    ds.records = std::move(records);
    return ds;
}

metrics::MetricsReport evaluate_generated(const Dataset& gt, const Dataset& generated,
                                          const metrics::FeatureExtractor& extractor) {
    std::vector<metrics::ViewSet> a, b;
    const auto& ids = generated.manifest.source_ids;
    if (ids.empty()) {
        // No provenance: record i belongs to asset i.
        if (generated.records.size() < gt.records.size())
            throw DataError("no generated record for asset id " + std::to_string(generated.records.size()));
        if (generated.records.size() > gt.records.size())
            throw DataError("generated set holds " + std::to_string(generated.records.size()) +
                            " records but ground truth only " + std::to_string(gt.records.size()));
        for (std::size_t i = 0; i < gt.records.size(); ++i) {
            a.push_back(gt.records[i].views);
            b.push_back(generated.records[i].views);
        }
    } else {
        if (ids.size() != generated.records.size())
            throw DataError("generated set has " + std::to_string(ids.size()) + " source ids for " +
                            std::to_string(generated.records.size()) + " records");
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= gt.records.size())
                throw DataError("generated record " + std::to_string(i) + " names asset id " + std::to_string(ids[i]) +
                                ", which the ground truth does not contain");
            a.push_back(gt.records[static_cast<std::size_t>(ids[i])].views);
            b.push_back(generated.records[i].views);
        }
    }
    return metrics::evaluate_run(a, b, extractor);
}

const std::array<DiagnosticCondition, 4>& diagnostic_conditions() {
    static const std::array<DiagnosticCondition, 4> conds = {{
        {"image_front", Regime::image_only, toy::View::front},
        {"image_bottom", Regime::image_only, toy::View::bottom},
        {"text", Regime::text_only, toy::View::front},
        {"joint_bottom_text", Regime::joint, toy::View::bottom},
    }};
    return conds;
}

std::vector<DiagnosticRow> diagnose(const dual::Bundle& bundle, const Dataset& data, const RunConfig& config,
                                    const std::filesystem::path& out) {
    const auto range = data.split(config.diagnose.split);
    const std::size_t available = range[1] - range[0];
    if (available < config.diagnose.assets)
        throw DataError("split '" + config.diagnose.split + "' holds " + std::to_string(available) + " assets, " +
                        std::to_string(config.diagnose.assets) + " requested");
    const auto& mc = bundle.config();
    const metrics::FeatureExtractor extractor(config.eval.extractor_seed, mc.image);
    const Rng root(config.seed);
    std::vector<DiagnosticRow> rows;
    for (const auto& cond : diagnostic_conditions()) {
        std::vector<AssetRecord> recs;
        std::vector<std::int64_t> ids;
        for (std::size_t j = 0; j < config.diagnose.assets; ++j) {
            const std::size_t id = range[0] + j;
            const AssetRecord& src = data.records[id];
            dual::ConditionInputs in;
            if (keeps_image(cond.regime)) in.image_patches = toy::image_patches(src.view(cond.view), mc.image_patch);
            if (keeps_text(cond.regime)) in.text_ids = src.tokens;
            Rng rng = root.split(id);
            const Tensor latent = generate_latent(bundle, in, cond.regime, config.sample, rng);
            recs.push_back(record_from_latent(latent, mc.image, src.tokens));
            ids.push_back(static_cast<std::int64_t>(id));
        }
        Dataset gen = generated_dataset(std::move(recs), std::move(ids), config.seed, mc.grid, mc.image);
        DiagnosticRow row{cond.name, evaluate_generated(data, gen, extractor)};
        if (!out.empty()) {
            write_dataset(out / cond.name / "generated", gen);
            metrics::write_report(out / cond.name, row.report, cond.name);
        }
        rows.push_back(std::move(row));
    }
    if (!out.empty()) binio::write_text(out / "diagnose.csv", diagnostic_csv(rows));
    return rows;
}

std::string diagnostic_csv(const std::vector<DiagnosticRow>& rows) {
    std::string s = "condition,hungarian,fd\n";
    for (const auto& r : rows)
        s += r.condition + "," + metrics::format_number(r.report.hungarian) + "," + metrics::format_number(r.report.fd) + "\n";
    return s;
}

}  // namespace biflow::pipeline
