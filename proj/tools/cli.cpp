// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <optional>

#include "biflow/autodiff.hpp"
#include "biflow/checkpoint.hpp"
#include "biflow/config.hpp"
#include "biflow/dataset.hpp"
#include "biflow/gradcheck_suite.hpp"
#include "biflow/metrics.hpp"
#include "biflow/pipeline.hpp"
#include "biflow/trainer.hpp"

namespace biflow::cli {

namespace fs = std::filesystem;

namespace {

struct ParityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
};

void add_common(CLI::App* app, Common& c, bool out_required = true) {
    app->add_option("--config", c.config, "JSON config document")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "Root seed; overrides the config");
    auto* o = app->add_option("--out", c.out, "Output directory");
    if (out_required) o->required();
    app->add_flag("--force", c.force, "Replace a non-empty output directory");
}

RunConfig resolve(const Common& c, const std::function<void(RunConfig&)>& overrides) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    overrides(cfg);
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream f(file, std::ios::binary);
    if (!f) throw DataError("cannot write " + file.string());
    f << text;
}

/// Empties (with force) or creates the directory, then echoes config and version.
void prepare_out(const fs::path& dir, bool force, const RunConfig& cfg) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw DataError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir)) {
            if (!force) throw DataError("output directory " + dir.string() + " is not empty; pass --force to replace it");
            for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
        }
    }
    fs::create_directories(dir);
    write_text(dir / "resolved_config.json", resolved_json(cfg));
    write_text(dir / "version.txt", version_string() + "\n");
}

void check_mismatch(bool mismatch, const std::string& what, bool allow, std::ostream& err) {
    if (!mismatch) return;
    err << "warning: " << what << "\n";
    if (!allow) throw ConfigError(what + " (pass --allow-mismatch to proceed)");
}

class TrainLog {
public:
    TrainLog(const fs::path& file, int every) : f_(file, std::ios::binary), every_(every) {
        if (!f_) throw DataError("cannot write " + file.string());
        f_ << "step,uncond,text,image,joint,loss,grad_norm,wall_time\n";
    }
    void add(const train::StepLog& log, std::uint64_t last) {
        if (log.step % static_cast<std::uint64_t>(every_) != 0 && log.step != last) return;
        f_ << log.step;
        for (int c : log.regime_counts) f_ << ',' << c;
        f_ << ',' << metrics::format_number(log.loss) << ',' << metrics::format_number(log.grad_norm) << ','
           << metrics::format_number(log.wall_seconds) << '\n';
        f_.flush();
    }

private:
    std::ofstream f_;
    int every_;
};

void save_training_state(const fs::path& dir, const ad::ParamStore& store, const train::Adam& adam,
                         ckpt::CheckpointInfo info) {
    info.step = adam.steps();
    ckpt::save(dir, store, info);
    ckpt::save_resume(dir / "resume.bin", store, adam.state());
}

// ---------------------------------------------------------------- datagen

struct DatagenOpts {
    Common common;
    std::optional<std::size_t> count;
};

int cmd_datagen(const DatagenOpts& o, std::ostream& out) {
    const RunConfig cfg = resolve(o.common, [&](RunConfig& c) {
        if (o.count) c.data.count = *o.count;
    });
    if (cfg.data.count == 0) throw DataError("empty dataset");
    prepare_out(o.common.out, o.common.force, cfg);
    DatasetConfig dc = cfg.data;
    dc.seed = cfg.seed;
    Dataset ds = generate_dataset(dc);
    write_dataset(o.common.out, ds);
    out << "assets " << ds.records.size() << " checksum " << ds.manifest.checksum << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainOpts {
    Common common;
    std::string data, stage, resume;
    std::optional<int> steps, batch, threads, checkpoint_every;
    bool allow_mismatch = false;
};

void train_overrides(train::TrainConfig& t, const TrainOpts& o) {
    if (o.steps) t.steps = *o.steps;
    if (o.batch) t.batch = *o.batch;
    if (o.threads) t.threads = *o.threads;
    if (o.checkpoint_every) t.checkpoint_every = *o.checkpoint_every;
}

int cmd_train(const TrainOpts& o, std::ostream& out, std::ostream& err) {
    const RunConfig cfg = resolve(o.common, [&](RunConfig& c) { train_overrides(c.pretrain, o); });
    train::TrainConfig tc = cfg.pretrain;
    try {
        tc.stage = train::parse_stage(o.stage == "img" || o.stage == "txt" ? "pretrain_" + o.stage : o.stage);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("--stage: ") + e.what());
    }
    if (tc.stage == train::Stage::joint) throw ConfigError("train runs the pretraining stages; use finetune for joint");
    tc.seed = cfg.seed;
    const auto modality = tc.stage == train::Stage::pretrain_img ? dual::Modality::image : dual::Modality::text;

    const Dataset data = read_dataset(o.data);
    Rng init = Rng(cfg.seed).split(modality == dual::Modality::image ? 1 : 2);
    dual::BranchModel model(cfg.model, modality, init);
    train::Adam adam(model.params(), tc.adam);

    ckpt::CheckpointInfo info;
    info.kind = "branch";
    info.model = cfg.model;
    info.modality = modality;
    info.config_fingerprint = config_fingerprint(cfg);
    info.dataset_checksum = data.manifest.checksum;

    if (!o.resume.empty()) {
        const auto prev = ckpt::load(o.resume).info;
        if (prev.kind != "branch" || prev.modality != modality)
            throw ckpt::CheckpointError("resume checkpoint " + o.resume + " is not a " +
                                        std::string(dual::modality_name(modality)) + " branch");
        check_mismatch(prev.dataset_checksum != info.dataset_checksum, "dataset differs from the resumed run",
                       o.allow_mismatch, err);
        check_mismatch(prev.config_fingerprint != info.config_fingerprint, "config differs from the resumed run",
                       o.allow_mismatch, err);
        adam.restore(ckpt::load_resume(fs::path(o.resume) / "resume.bin", model.params()));
    }

    const fs::path dir = o.common.out;
    prepare_out(dir, o.common.force, cfg);
    TrainLog log(dir / "train_log.csv", tc.log_every);
    train::Hooks hooks;
    const auto last = static_cast<std::uint64_t>(std::max(tc.steps, 1) - 1);
    hooks.on_step = [&](const train::StepLog& l) { log.add(l, last); };
    hooks.on_checkpoint = [&](std::uint64_t k) {
        save_training_state(dir / "checkpoints" / ("step_" + std::to_string(k)), model.params(), adam, info);
    };
    train::pretrain_branch(model, data, data.split("train"), tc, adam, hooks);
    save_training_state(dir, model.params(), adam, info);
    out << "trained " << dual::modality_name(modality) << " branch to step " << adam.steps() << ", checkpoint "
        << ckpt::load(dir).checksum << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- finetune

struct FinetuneOpts {
    TrainOpts train;
    std::string image, text, strategy;
    bool freeze = false;
};

int cmd_finetune(const FinetuneOpts& fo, std::ostream& out, std::ostream& err) {
    const TrainOpts& o = fo.train;
    const RunConfig cfg = resolve(o.common, [&](RunConfig& c) {
        train_overrides(c.finetune, o);
        if (!fo.strategy.empty()) {
            try {
                c.finetune.strategy = dual::parse_fusion(fo.strategy);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("--strategy: ") + e.what());
            }
        }
        if (fo.freeze) c.finetune.freeze_branches = true;
    });
    train::TrainConfig tc = cfg.finetune;
    tc.stage = train::Stage::joint;
    tc.seed = cfg.seed;

    const Dataset data = read_dataset(o.data);
    const auto range = data.split("train");
    const auto img_ck = ckpt::load(fo.image);
    const auto txt_ck = ckpt::load(fo.text);
    for (const auto* ck : {&img_ck, &txt_ck}) {
        if (ck->info.kind != "branch") throw ckpt::CheckpointError("finetune needs two branch checkpoints");
        if (ck->info.model != cfg.model)
            throw ckpt::CheckpointError("branch checkpoint architecture differs from the configured model");
        check_mismatch(ck->info.dataset_checksum != data.manifest.checksum,
                       "a branch checkpoint was trained on a different dataset", o.allow_mismatch, err);
    }
    if (img_ck.info.modality != dual::Modality::image) throw ckpt::CheckpointError(fo.image + " is not an image branch");
    if (txt_ck.info.modality != dual::Modality::text) throw ckpt::CheckpointError(fo.text + " is not a text branch");

    const dual::BranchModel img_model = ckpt::make_branch_model(img_ck);
    const dual::BranchModel txt_model = ckpt::make_branch_model(txt_ck);
    std::optional<dual::FusionKind> fusion;
    if (tc.strategy != dual::FusionKind::sim) fusion = tc.strategy;
    Rng init = Rng(cfg.seed).split(3);
    dual::Bundle bundle(cfg.model, init, fusion, cfg.at_residual);
    bundle.load_branch(img_model.branch(), img_model.params(), dual::Modality::image);
    bundle.load_branch(txt_model.branch(), txt_model.params(), dual::Modality::text);
    train::Adam adam(bundle.params(), tc.adam);

    ckpt::CheckpointInfo info;
    info.kind = "bundle";
    info.model = cfg.model;
    info.fusion = fusion;
    info.at_residual = cfg.at_residual;
    info.config_fingerprint = config_fingerprint(cfg);
    info.dataset_checksum = data.manifest.checksum;

    if (!o.resume.empty()) {
        const auto prev = ckpt::load(o.resume).info;
        if (prev.kind != "bundle" || prev.fusion != fusion)
            throw ckpt::CheckpointError("resume checkpoint " + o.resume + " is not a matching bundle");
        check_mismatch(prev.dataset_checksum != info.dataset_checksum, "dataset differs from the resumed run",
                       o.allow_mismatch, err);
        check_mismatch(prev.config_fingerprint != info.config_fingerprint, "config differs from the resumed run",
                       o.allow_mismatch, err);
        adam.restore(ckpt::load_resume(fs::path(o.resume) / "resume.bin", bundle.params()));
    } else {
        const auto parity = train::handoff_parity(bundle, img_model, txt_model, data, range, tc);
        out << "handoff parity: max |v_bundle - v_mean| = " << metrics::format_number(parity.max_velocity_diff)
            << ", fused loss " << metrics::format_number(parity.fused_loss) << ", branch mixture loss "
            << metrics::format_number(parity.mixture_loss) << "\n";
        if (!(parity.max_velocity_diff <= 1e-6))
            throw ParityError("handoff parity violated: " + metrics::format_number(parity.max_velocity_diff) + " > 1e-6");
    }

    const fs::path dir = o.common.out;
    prepare_out(dir, o.common.force, cfg);
    TrainLog log(dir / "train_log.csv", tc.log_every);
    train::Hooks hooks;
    const auto last = static_cast<std::uint64_t>(std::max(tc.steps, 1) - 1);
    hooks.on_step = [&](const train::StepLog& l) { log.add(l, last); };
    hooks.on_checkpoint = [&](std::uint64_t k) {
        save_training_state(dir / "checkpoints" / ("step_" + std::to_string(k)), bundle.params(), adam, info);
    };
    train::joint_finetune(bundle, data, range, tc, adam, hooks);
    save_training_state(dir, bundle.params(), adam, info);
    out << "finetuned bundle to step " << adam.steps() << ", checkpoint " << ckpt::load(dir).checksum << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- sample

struct SampleOpts {
    Common common;
    std::string ckpt, regime = "joint", data, view = "front", attrs, strategy;
    std::optional<std::size_t> asset;
    std::optional<int> steps, count;
    std::optional<double> guidance;
};

void sample_overrides(RunConfig& c, const std::optional<int>& steps, const std::optional<double>& guidance,
                      const std::string& strategy) {
    if (steps) c.sample.steps = *steps;
    if (guidance) c.sample.guidance = *guidance;
    if (!strategy.empty()) {
        try {
            c.sample.strategy = dual::parse_fusion(strategy);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("--strategy: ") + e.what());
        }
    }
}

dual::Bundle load_bundle(const std::string& dir) {
    const auto ck = ckpt::load(dir);
    if (ck.info.kind != "bundle") throw ckpt::CheckpointError(dir + " is not a bundle checkpoint");
    return ckpt::make_bundle(ck);
}

int cmd_sample(const SampleOpts& o, std::ostream& out) {
    const RunConfig cfg = resolve(o.common, [&](RunConfig& c) {
        sample_overrides(c, o.steps, o.guidance, o.strategy);
        if (o.count) c.sample.count = *o.count;
    });
    Regime regime;
    toy::View view;
    try {
        regime = parse_regime(o.regime);
        view = toy::parse_view(o.view);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const dual::Bundle bundle = load_bundle(o.ckpt);
    const auto& mc = bundle.config();

    std::optional<AssetRecord> source;
    if (o.asset) {
        if (o.data.empty()) throw ConfigError("--asset needs --data");
        const Dataset data = read_dataset(o.data);
        if (*o.asset >= data.records.size())
            throw DataError("asset id " + std::to_string(*o.asset) + " is outside the dataset");
        source = data.records[*o.asset];
    }
    std::array<std::int32_t, toy::kTextTokens> tokens;
    tokens.fill(-1);
    bool have_text = false;
    if (!o.attrs.empty()) {
        try {
            tokens = toy::text_token_ids(toy::parse_attributes(o.attrs));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("--attrs: ") + e.what());
        }
        have_text = true;
    } else if (source) {
        tokens = source->tokens;
        have_text = true;
    }

    dual::ConditionInputs in;
    if (keeps_text(regime)) {
        if (!have_text)
            throw ConfigError(std::string(regime_name(regime)) + " regime needs text attributes: pass --attrs or --asset");
        in.text_ids = tokens;
    }
    if (keeps_image(regime)) {
        if (!source) throw ConfigError(std::string(regime_name(regime)) + " regime needs an image: pass --data and --asset");
        in.image_patches = toy::image_patches(source->view(view), mc.image_patch);
    }

    prepare_out(o.common.out, o.common.force, cfg);
    const std::int64_t source_id = o.asset ? static_cast<std::int64_t>(*o.asset) : -1;
    const Rng base = Rng(cfg.seed).split(o.asset ? *o.asset : 0);
    std::vector<AssetRecord> recs;
    std::string csv = "index,regime,source_id,view,attrs,steps,guidance,strategy\n";
    for (int j = 0; j < cfg.sample.count; ++j) {
        Rng rng = base.split(static_cast<std::uint64_t>(j));
        const Tensor latent = pipeline::generate_latent(bundle, in, regime, cfg.sample, rng);
        recs.push_back(pipeline::record_from_latent(latent, mc.image, tokens));
        csv += std::to_string(j) + "," + std::string(regime_name(regime)) + "," + std::to_string(source_id) + "," +
               (keeps_image(regime) ? std::string(toy::view_name(view)) : "") + "," + o.attrs + "," +
               std::to_string(cfg.sample.steps) + "," + metrics::format_number(cfg.sample.guidance) + "," +
               std::string(dual::fusion_name(cfg.sample.strategy)) + "\n";
    }
    Dataset gen = pipeline::generated_dataset(std::move(recs),
                                              std::vector<std::int64_t>(static_cast<std::size_t>(cfg.sample.count), source_id),
                                              cfg.seed, mc.grid, mc.image);
    write_dataset(fs::path(o.common.out) / "generated", gen);
    write_text(fs::path(o.common.out) / "samples.csv", csv);
    out << "wrote " << cfg.sample.count << " samples, checksum " << gen.manifest.checksum << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalOpts {
    Common common;
    std::string gt, generated;
    std::optional<std::uint64_t> extractor_seed;
};

int cmd_eval(const EvalOpts& o, std::ostream& out) {
    const RunConfig cfg = resolve(o.common, [&](RunConfig& c) {
        if (o.extractor_seed) c.eval.extractor_seed = *o.extractor_seed;
    });
    const Dataset gt = read_dataset(o.gt);
    fs::path gen_dir = o.generated;
    if (!fs::exists(gen_dir / "manifest.json") && fs::exists(gen_dir / "generated" / "manifest.json"))
        gen_dir /= "generated";
    const Dataset gen = read_dataset(gen_dir);
    if (gen.manifest.image != gt.manifest.image) throw DataError("generated renders differ in size from ground truth");
    const metrics::FeatureExtractor extractor(cfg.eval.extractor_seed, gt.manifest.image);
    const auto report = pipeline::evaluate_generated(gt, gen, extractor);

    const fs::path dir = o.common.out;
    prepare_out(dir, o.common.force, cfg);
    metrics::write_report(dir, report, "eval");
    std::vector<toy::Image> images;
    for (const auto& r : gen.records) images.insert(images.end(), r.views.begin(), r.views.end());
    metrics::write_features(dir / "features", extractor.extract(images, "generated"));
    out << "objects " << report.objects << " hungarian " << metrics::format_number(report.hungarian) << " fd "
        << metrics::format_number(report.fd) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseOpts {
    Common common;
    std::string ckpt, data, strategy;
    std::optional<std::size_t> assets;
    std::optional<int> steps;
    std::optional<double> guidance;
};

int cmd_diagnose(const DiagnoseOpts& o, std::ostream& out) {
    const RunConfig cfg = resolve(o.common, [&](RunConfig& c) {
        sample_overrides(c, o.steps, o.guidance, o.strategy);
        if (o.assets) c.diagnose.assets = *o.assets;
    });
    const dual::Bundle bundle = load_bundle(o.ckpt);
    const Dataset data = read_dataset(o.data);
    prepare_out(o.common.out, o.common.force, cfg);
    const auto rows = pipeline::diagnose(bundle, data, cfg, o.common.out);
    out << pipeline::diagnostic_csv(rows);
    return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckOpts {
    Common common;
    int trials = 3;
    std::string corrupt;
};

int cmd_gradcheck(const GradcheckOpts& o, std::ostream& out) {
    const RunConfig cfg = resolve(o.common, [](RunConfig&) {});
    ad::GraphOptions options;
    if (!o.corrupt.empty()) {
        options.corrupt_backward = ad::op_from_name(o.corrupt);
        if (!options.corrupt_backward) throw ConfigError("unknown op '" + o.corrupt + "'");
    }
    const auto rows = ad::run_gradcheck_suite(cfg.seed, o.trials, options);
    std::string csv = "name,max_rel_error,status\n";
    bool ok = true;
    for (const auto& r : rows) {
        csv += r.name + "," + metrics::format_number(r.max_rel_error) + "," + (r.pass() ? "pass" : "FAIL") + "\n";
        ok = ok && r.pass();
    }
    out << csv;
    if (!o.common.out.empty()) {
        prepare_out(o.common.out, o.common.force, cfg);
        write_text(fs::path(o.common.out) / "gradcheck.csv", csv);
    }
    if (!ok) throw ParityError("gradient check failed");
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dual-branch rectified-flow toolkit on a procedural voxel world", "biflow"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_string());

    DatagenOpts dg;
    auto* datagen = app.add_subcommand("datagen", "Generate a seeded toy dataset");
    add_common(datagen, dg.common);
    datagen->add_option("--count", dg.count, "Number of assets");

    TrainOpts tr;
    auto* train = app.add_subcommand("train", "Pretrain one branch");
    add_common(train, tr.common);
    train->add_option("--data", tr.data, "Dataset directory")->required();
    train->add_option("--stage", tr.stage, "img or txt")->required();
    auto add_train_flags = [](CLI::App* a, TrainOpts& t) {
        a->add_option("--steps", t.steps, "Optimizer steps");
        a->add_option("--batch", t.batch, "Batch size");
        a->add_option("--threads", t.threads, "Worker threads (0: all cores)");
        a->add_option("--checkpoint-every", t.checkpoint_every, "Intermediate checkpoint interval");
        a->add_option("--resume", t.resume, "Checkpoint directory holding resume.bin");
        a->add_flag("--allow-mismatch", t.allow_mismatch, "Proceed despite config or dataset fingerprint mismatch");
    };
    add_train_flags(train, tr);

    FinetuneOpts ft;
    auto* finetune = app.add_subcommand("finetune", "Joint finetuning of a bridged bundle");
    add_common(finetune, ft.train.common);
    finetune->add_option("--data", ft.train.data, "Dataset directory")->required();
    finetune->add_option("--image", ft.image, "Image branch checkpoint")->required();
    finetune->add_option("--text", ft.text, "Text branch checkpoint")->required();
    finetune->add_option("--strategy", ft.strategy, "sim, aw or at");
    finetune->add_flag("--freeze-branches", ft.freeze, "Train bridges and fusion only");
    add_train_flags(finetune, ft.train);

    SampleOpts sm;
    auto* sample = app.add_subcommand("sample", "Generate grids from a bundle");
    add_common(sample, sm.common);
    sample->add_option("--ckpt", sm.ckpt, "Bundle checkpoint")->required();
    sample->add_option("--regime", sm.regime, "text, image, joint or uncond");
    sample->add_option("--data", sm.data, "Dataset supplying the condition asset");
    sample->add_option("--asset", sm.asset, "Condition asset id");
    sample->add_option("--view", sm.view, "front, top or bottom");
    sample->add_option("--attrs", sm.attrs, "Attributes, e.g. box,small,red,blue,plain");
    sample->add_option("--steps", sm.steps, "Euler steps K");
    sample->add_option("--guidance", sm.guidance, "Guidance scale");
    sample->add_option("--strategy", sm.strategy, "sim, aw or at");
    sample->add_option("--count", sm.count, "Samples to draw");

    EvalOpts ev;
    auto* eval = app.add_subcommand("eval", "Score a generated set against ground truth");
    add_common(eval, ev.common);
    eval->add_option("--gt", ev.gt, "Ground-truth dataset")->required();
    eval->add_option("--generated", ev.generated, "Generated set (or a sample output directory)")->required();
    eval->add_option("--extractor-seed", ev.extractor_seed, "Feature extractor seed");

    DiagnoseOpts dn;
    auto* diagnose = app.add_subcommand("diagnose", "Four-condition diagnostic table");
    add_common(diagnose, dn.common);
    diagnose->add_option("--ckpt", dn.ckpt, "Bundle checkpoint")->required();
    diagnose->add_option("--data", dn.data, "Dataset")->required();
    diagnose->add_option("--assets", dn.assets, "Held-out assets per condition");
    diagnose->add_option("--steps", dn.steps, "Euler steps K");
    diagnose->add_option("--guidance", dn.guidance, "Guidance scale");
    diagnose->add_option("--strategy", dn.strategy, "sim, aw or at");

    GradcheckOpts gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference audit of every op and a small model");
    add_common(gradcheck, gc.common, false);
    gradcheck->add_option("--trials", gc.trials, "Random points per op");
    gradcheck->add_option("--corrupt-op", gc.corrupt)->group("");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (datagen->parsed()) return cmd_datagen(dg, out);
        if (train->parsed()) return cmd_train(tr, out, err);
        if (finetune->parsed()) return cmd_finetune(ft, out, err);
        if (sample->parsed()) return cmd_sample(sm, out);
        if (eval->parsed()) return cmd_eval(ev, out);
        if (diagnose->parsed()) return cmd_diagnose(dn, out);
        if (gradcheck->parsed()) return cmd_gradcheck(gc, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const metrics::MetricsError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const ParityError& e) {
        err << e.what() << "\n";
        return kExitParity;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitConfig;
}

}  // namespace biflow::cli
