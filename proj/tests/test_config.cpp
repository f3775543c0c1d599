// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "biflow/config.hpp"

using namespace biflow;

TEST_CASE("defaults validate and echo every section") {
    RunConfig c;
    CHECK_NOTHROW(c.validate());
    const std::string j = resolved_json(c);
    for (const char* key : {"\"seed\"", "\"data\"", "\"model\"", "\"pretrain\"", "\"finetune\"", "\"sample\"", "\"eval\"",
                            "\"diagnose\""})
        CHECK(j.find(key) != std::string::npos);
}

TEST_CASE("unknown fields are rejected at every level") {
    CHECK_THROWS_AS(parse_config(R"({"sed": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"model": {"dept": 2}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"pretrain": {"strategy": "aw"}})"), ConfigError);
    CHECK_NOTHROW(parse_config(R"({"finetune": {"strategy": "aw"}})"));
    try {
        parse_config(R"({"sample": {"guidence": 2}})");
        FAIL("accepted unknown field");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("sample.guidence") != std::string::npos);
    }
}

TEST_CASE("malformed values are config errors") {
    CHECK_THROWS_AS(parse_config("{"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"seed": "x"})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"sample": {"strategy": "max"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"model": {"width": 30, "heads": 4}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"sample": {"steps": 0}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"data": {"grid_resolution": 16}, "model": {"grid_resolution": 8}})"), ConfigError);
}

TEST_CASE("file values sit on top of defaults") {
    const auto c = parse_config(R"({"seed": 11, "data": {"grid_resolution": 16}, "finetune": {"lr": 0.5}})");
    CHECK(c.seed == 11);
    CHECK(c.model.grid == 16);  // follows the data resolution
    CHECK(c.finetune.adam.lr == 0.5);
    CHECK(c.pretrain.adam.lr == RunConfig{}.pretrain.adam.lr);
    CHECK(c.sample.steps == 25);
}

TEST_CASE("resolved config parses back to itself") {
    const auto c = parse_config(R"({"seed": 5, "model": {"depth": 2, "at_residual": true},
                                    "finetune": {"strategy": "at", "freeze_branches": true},
                                    "pretrain": {"time_sampling": "logit_normal"}})");
    const std::string once = resolved_json(c);
    CHECK(resolved_json(parse_config(once)) == once);
    CHECK(config_fingerprint(parse_config(once)) == config_fingerprint(c));
}

TEST_CASE("fingerprint tracks every value") {
    RunConfig a, b;
    b.sample.guidance = 2.5;
    CHECK(config_fingerprint(a) != config_fingerprint(b));
    CHECK(config_fingerprint(a) == config_fingerprint(RunConfig{}));
}
