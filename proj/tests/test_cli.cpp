// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "biflow/checkpoint.hpp"
#include "biflow/config.hpp"
#include "biflow/dataset.hpp"
#include "cli.hpp"

using namespace biflow;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "biflow");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("biflow_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string p(const std::string& name) { return (scratch() / name).string(); }

std::string slurp(const fs::path& file) {
    std::ifstream f(file, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

const char* kTiny = R"({"seed": 3, "data": {"count": 40},
  "model": {"depth": 1, "width": 16, "heads": 2, "time_features": 8},
  "pretrain": {"steps": 4, "batch": 4, "log_every": 1, "threads": 1},
  "finetune": {"steps": 3, "batch": 4, "threads": 1},
  "sample": {"steps": 4}, "diagnose": {"assets": 3}})";

/// Dataset, both branches and a bundle for the tiny config, built once.
struct Fixture {
    std::string config, data, img, txt, bundle;
};

const Fixture& fixture() {
    static const Fixture fx = [] {
        Fixture f{p("tiny.json"), p("data"), p("img"), p("txt"), p("bundle")};
        std::ofstream(f.config) << kTiny;
        REQUIRE(run_cli({"datagen", "--config", f.config, "--out", f.data}).code == 0);
        REQUIRE(run_cli({"train", "--config", f.config, "--data", f.data, "--stage", "img", "--out", f.img}).code == 0);
        REQUIRE(run_cli({"train", "--config", f.config, "--data", f.data, "--stage", "txt", "--out", f.txt}).code == 0);
        REQUIRE(run_cli({"finetune", "--config", f.config, "--data", f.data, "--image", f.img, "--text", f.txt, "--out",
                     f.bundle})
                    .code == 0);
        return f;
    }();
    return fx;
}

void check_echo(const fs::path& dir) {
    CHECK(fs::exists(dir / "resolved_config.json"));
    CHECK(slurp(dir / "version.txt") == version_string() + "\n");
}

}  // namespace

TEST_CASE("datagen golden checksum for seed 7, 1000 assets") {
    const auto r = run_cli({"datagen", "--seed", "7", "--count", "1000", "--out", p("golden")});
    REQUIRE(r.code == 0);
    CHECK(r.out == "assets 1000 checksum a1319a846e5669af\n");
    check_echo(p("golden"));
}

TEST_CASE("datagen repeats byte-identically and guards its output") {
    const auto a = run_cli({"datagen", "--seed", "2", "--count", "30", "--out", p("dg")});
    REQUIRE(a.code == 0);
    const auto payload = slurp(fs::path(p("dg")) / "payload.bin");
    const auto refused = run_cli({"datagen", "--seed", "2", "--count", "30", "--out", p("dg")});
    CHECK(refused.code == cli::kExitData);
    CHECK(refused.err.find("--force") != std::string::npos);
    const auto b = run_cli({"datagen", "--seed", "2", "--count", "30", "--out", p("dg"), "--force"});
    CHECK(b.out == a.out);
    CHECK(slurp(fs::path(p("dg")) / "payload.bin") == payload);
}

TEST_CASE("datagen with zero assets fails") {
    const auto r = run_cli({"datagen", "--count", "0", "--out", p("empty")});
    CHECK(r.code == cli::kExitData);
    CHECK(r.err.find("empty dataset") != std::string::npos);
}

TEST_CASE("config errors map to exit code 2") {
    std::ofstream(p("bad.json")) << R"({"modle": {}})";
    CHECK(run_cli({"datagen", "--config", p("bad.json"), "--out", p("bad")}).code == cli::kExitConfig);
    CHECK(run_cli({"datagen"}).code == cli::kExitConfig);
    CHECK(run_cli({"frobnicate"}).code == cli::kExitConfig);
    CHECK_FALSE(fs::exists(p("bad")));
}

TEST_CASE("flags override the config file") {
    std::ofstream(p("prec.json")) << R"({"seed": 3, "data": {"count": 12}})";
    REQUIRE(run_cli({"datagen", "--config", p("prec.json"), "--seed", "9", "--out", p("prec")}).code == 0);
    const auto c = load_config(fs::path(p("prec")) / "resolved_config.json");
    CHECK(c.seed == 9);
    CHECK(c.data.count == 12);
    CHECK(read_dataset(p("prec")).manifest.seed == 9);
}

TEST_CASE("train writes checkpoint, resume state and log") {
    const auto& f = fixture();
    check_echo(f.img);
    CHECK(fs::exists(fs::path(f.img) / "resume.bin"));
    const auto log = slurp(fs::path(f.img) / "train_log.csv");
    CHECK(log.rfind("step,uncond,text,image,joint,loss,grad_norm,wall_time\n", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 5);
    const auto ck = ckpt::load(f.img);
    CHECK(ck.info.step == 4);
    CHECK(ck.info.dataset_checksum == read_dataset(f.data).manifest.checksum);
}

TEST_CASE("resumed training reproduces the uninterrupted checkpoint") {
    const auto& f = fixture();
    REQUIRE(run_cli({"train", "--config", f.config, "--data", f.data, "--stage", "txt", "--checkpoint-every", "2", "--out",
                 p("full")})
                .code == 0);
    REQUIRE(fs::exists(fs::path(p("full")) / "checkpoints" / "step_2" / "resume.bin"));
    const auto r = run_cli({"train", "--config", f.config, "--data", f.data, "--stage", "txt", "--checkpoint-every", "2",
                        "--resume", (fs::path(p("full")) / "checkpoints" / "step_2").string(), "--out", p("resumed")});
    REQUIRE(r.code == 0);
    CHECK(ckpt::load(p("resumed")).checksum == ckpt::load(p("full")).checksum);
    CHECK(slurp(fs::path(p("resumed")) / "resume.bin") == slurp(fs::path(p("full")) / "resume.bin"));
}

TEST_CASE("resume against a different config needs --allow-mismatch") {
    const auto& f = fixture();
    const auto r = run_cli({"train", "--config", f.config, "--data", f.data, "--stage", "img", "--steps", "6", "--resume",
                        f.img, "--out", p("mismatch")});
    CHECK(r.code == cli::kExitConfig);
    CHECK(r.err.find("warning") != std::string::npos);
    CHECK(run_cli({"train", "--config", f.config, "--data", f.data, "--stage", "img", "--steps", "6", "--resume", f.img,
               "--allow-mismatch", "--out", p("mismatch")})
              .code == 0);
    CHECK(ckpt::load(p("mismatch")).info.step == 6);
}

TEST_CASE("missing or wrong checkpoints are data errors") {
    const auto& f = fixture();
    CHECK(run_cli({"finetune", "--config", f.config, "--data", f.data, "--image", p("nowhere"), "--text", f.txt, "--out",
               p("ft_missing")})
              .code == cli::kExitData);
    CHECK(run_cli({"finetune", "--config", f.config, "--data", f.data, "--image", f.txt, "--text", f.img, "--out",
               p("ft_swapped")})
              .code == cli::kExitData);
    CHECK(run_cli({"sample", "--config", f.config, "--ckpt", f.img, "--regime", "uncond", "--out", p("s_branch")}).code ==
          cli::kExitData);
}

TEST_CASE("finetune prints the handoff parity and --steps 0 keeps the branches") {
    const auto& f = fixture();
    const auto r = run_cli({"finetune", "--config", f.config, "--data", f.data, "--image", f.img, "--text", f.txt, "--steps",
                        "0", "--out", p("ft0")});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("handoff parity: max |v_bundle - v_mean| = 0,") != std::string::npos);
    const auto bundle = ckpt::load(p("ft0"));
    std::size_t compared = 0;
    for (const auto& [dir, prefix] : {std::pair{f.img, "img."}, std::pair{f.txt, "txt."}}) {
        for (const auto& [name, value] : ckpt::load(dir).params) {
            const auto it = std::find_if(bundle.params.begin(), bundle.params.end(),
                                         [&, &n = name](const auto& q) { return q.first == prefix + n; });
            REQUIRE(it != bundle.params.end());
            CHECK(std::ranges::equal(it->second.values(), value.values()));
            ++compared;
        }
    }
    CHECK(compared > 0);
    for (const auto& [name, value] : bundle.params)
        if (name.rfind("bridge.", 0) == 0)
            for (double v : value.values()) CHECK(v == 0.0);
}

TEST_CASE("training divergence exits with code 4") {
    const auto& f = fixture();
    std::ofstream(p("diverge.json")) << R"({"seed": 3, "data": {"count": 40},
      "model": {"depth": 1, "width": 16, "heads": 2, "time_features": 8},
      "pretrain": {"steps": 50, "batch": 2, "lr": 1e300, "clip_norm": 1e300, "threads": 1}})";
    const auto r = run_cli({"train", "--config", p("diverge.json"), "--data", f.data, "--stage", "img", "--out", p("div")});
    CHECK(r.code == cli::kExitNumerical);
    CHECK(r.err.find("at step") != std::string::npos);
}

TEST_CASE("sample is reproducible and checks its conditions") {
    const auto& f = fixture();
    auto run = [&](const std::string& out) {
        return run_cli({"sample", "--config", f.config, "--ckpt", f.bundle, "--regime", "joint", "--data", f.data, "--asset",
                    "37", "--view", "bottom", "--count", "2", "--out", p(out)});
    };
    REQUIRE(run("sa").code == 0);
    REQUIRE(run("sb").code == 0);
    CHECK(slurp(fs::path(p("sa")) / "generated" / "payload.bin") == slurp(fs::path(p("sb")) / "generated" / "payload.bin"));
    CHECK(slurp(fs::path(p("sa")) / "samples.csv") == slurp(fs::path(p("sb")) / "samples.csv"));
    const auto gen = read_dataset(fs::path(p("sa")) / "generated");
    CHECK(gen.manifest.kind == "generated");
    CHECK(gen.manifest.source_ids == std::vector<std::int64_t>{37, 37});
    check_echo(p("sa"));

    CHECK(run_cli({"sample", "--config", f.config, "--ckpt", f.bundle, "--regime", "uncond", "--out", p("su")}).code == 0);
    CHECK(run_cli({"sample", "--config", f.config, "--ckpt", f.bundle, "--regime", "text", "--attrs",
               "sphere,large,red,blue,striped", "--steps", "1", "--out", p("sk1")})
              .code == 0);
    const auto joint = run_cli({"sample", "--config", f.config, "--ckpt", f.bundle, "--regime", "joint", "--out", p("sj")});
    CHECK(joint.code == cli::kExitConfig);
    CHECK(joint.err.find("text attributes") != std::string::npos);
}

TEST_CASE("eval of ground truth against itself is perfect") {
    const auto& f = fixture();
    const auto r = run_cli({"eval", "--gt", f.data, "--generated", f.data, "--out", p("self")});
    REQUIRE(r.code == 0);
    const auto csv = slurp(fs::path(p("self")) / "report.csv");
    CHECK(csv.find("eval,40,1,") != std::string::npos);
    const double fd = std::stod(csv.substr(csv.rfind(',') + 1));
    CHECK(fd < 1e-9);
    CHECK(fs::exists(fs::path(p("self")) / "report.json"));
    CHECK(fs::exists(fs::path(p("self")) / "features" / "features.json"));
}

TEST_CASE("eval of a shuffled pairing scores lower than self-eval") {
    REQUIRE(run_cli({"datagen", "--seed", "5", "--count", "100", "--out", p("gt100")}).code == 0);
    Dataset gt = read_dataset(p("gt100"));
    Dataset shuffled = gt;
    shuffled.manifest.kind = "generated";
    shuffled.manifest.source_ids.resize(gt.records.size());
    std::iota(shuffled.manifest.source_ids.begin(), shuffled.manifest.source_ids.end(), 0);
    std::rotate(shuffled.manifest.source_ids.begin(), shuffled.manifest.source_ids.begin() + 1,
                shuffled.manifest.source_ids.end());
    write_dataset(p("shuffled"), shuffled);
    const auto self = run_cli({"eval", "--gt", p("gt100"), "--generated", p("gt100"), "--out", p("ev_self")});
    const auto shuf = run_cli({"eval", "--gt", p("gt100"), "--generated", p("shuffled"), "--out", p("ev_shuf")});
    REQUIRE(self.code == 0);
    REQUIRE(shuf.code == 0);
    auto hungarian = [](const std::string& line) {
        const auto at = line.find("hungarian ") + 10;
        return std::stod(line.substr(at, line.find(' ', at) - at));
    };
    CHECK(hungarian(self.out) == 1.0);
    CHECK(hungarian(shuf.out) < hungarian(self.out));
}

TEST_CASE("eval names the asset with no generated record") {
    const auto& f = fixture();
    Dataset partial = read_dataset(f.data);
    partial.records.resize(25);
    partial.manifest.splits = {{"all", {0, 25}}};
    write_dataset(p("partial"), partial);
    const auto r = run_cli({"eval", "--gt", f.data, "--generated", p("partial"), "--out", p("ev_partial")});
    CHECK(r.code == cli::kExitData);
    CHECK(r.err.find("asset id 25") != std::string::npos);
}

TEST_CASE("diagnose emits four condition rows") {
    const auto& f = fixture();
    const auto r = run_cli({"diagnose", "--config", f.config, "--ckpt", f.bundle, "--data", f.data, "--out", p("diag")});
    REQUIRE(r.code == 0);
    const auto csv = slurp(fs::path(p("diag")) / "diagnose.csv");
    CHECK(csv == r.out);
    std::istringstream lines(csv);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(lines, line)) rows.push_back(line);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0] == "condition,hungarian,fd");
    CHECK(rows[1].rfind("image_front,", 0) == 0);
    CHECK(rows[2].rfind("image_bottom,", 0) == 0);
    CHECK(rows[3].rfind("text,", 0) == 0);
    CHECK(rows[4].rfind("joint_bottom_text,", 0) == 0);
    for (const char* c : {"image_front", "image_bottom", "text", "joint_bottom_text"}) {
        CHECK(fs::exists(fs::path(p("diag")) / c / "report.json"));
        CHECK(read_dataset(fs::path(p("diag")) / c / "generated").records.size() == 3);
    }
    check_echo(p("diag"));
}

TEST_CASE("gradcheck passes and catches a corrupted backward rule") {
    const auto ok = run_cli({"gradcheck", "--trials", "1", "--out", p("gc")});
    CHECK(ok.code == 0);
    std::istringstream lines(ok.out);
    std::string line;
    int rows = -1;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 14);
    CHECK(ok.out.find("FAIL") == std::string::npos);
    CHECK(fs::exists(fs::path(p("gc")) / "gradcheck.csv"));
    const auto bad = run_cli({"gradcheck", "--trials", "1", "--corrupt-op", "softmax"});
    CHECK(bad.code == cli::kExitParity);
    CHECK(bad.out.find("softmax,") != std::string::npos);
    CHECK(bad.out.find("FAIL") != std::string::npos);
}
