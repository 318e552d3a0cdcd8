#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "support/test_util.hpp"

#ifndef EMBED2TEXT_CLI_PATH
#error "EMBED2TEXT_CLI_PATH must be defined"
#endif

namespace {

using nlohmann::json;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(EMBED2TEXT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli exit codes and run manifests") {
  testutil::TempDir tmp("cli");
  const std::string data = tmp.file("data");
  const std::string cache = tmp.file("cache.bin");
  const std::string embedder = "synthetic-bytes-d16-seed3";

  SUBCASE("missing required key exits 2 with the key named") {
    const std::string cmd = std::string(EMBED2TEXT_CLI_PATH) +
                            " build-dataset --synthetic-docs 5 --out " + tmp.file("x") + " 2> " +
                            tmp.file("err.txt");
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 2);
    CHECK(slurp(tmp.file("err.txt")).find("embedder") != std::string::npos);
  }

  SUBCASE("unknown config key exits 2") {
    std::ofstream cfg(tmp.file("bad.json"));
    cfg << R"({"no_such_key": 1})";
    cfg.close();
    CHECK(run_cli("build-dataset --config " + tmp.file("bad.json") + " --synthetic-docs 5 --out " +
                  tmp.file("x") + " --embedder " + embedder) == 2);
  }

  SUBCASE("missing corpus file exits 2") {
    CHECK(run_cli("build-dataset --corpus /nonexistent.jsonl --out " + tmp.file("x") +
                  " --embedder " + embedder) == 2);
  }

  SUBCASE("valid build-dataset run: exit 0, manifest written, idempotent rerun") {
    const std::string args = "build-dataset --synthetic-docs 30 --max-tokens 8 --embedder " +
                             embedder + " --cache " + cache + " --out " + data;
    REQUIRE(run_cli(args) == 0);
    const json manifest = json::parse(slurp(data + "/manifest.json"));
    CHECK(manifest.at("command") == "build-dataset");
    CHECK(manifest.at("config").at("embedder") == embedder);
    CHECK(manifest.contains("version"));
    CHECK(manifest.at("config").at("stats").at("embedded").get<long>() == 30);

    const std::string first = slurp(data + "/dataset.jsonl");
    REQUIRE(run_cli(args) == 0);  // rerun: served from cache, same manifest bytes
    CHECK(slurp(data + "/dataset.jsonl") == first);
    const json manifest2 = json::parse(slurp(data + "/manifest.json"));
    CHECK(manifest2.at("config").at("stats").at("embedded").get<long>() == 0);
    CHECK(manifest2.at("config").at("stats").at("cache_hits").get<long>() == 30);
  }
}

TEST_CASE("cli training and inversion workflow") {
  testutil::TempDir tmp("cli-train");
  const std::string embedder = "synthetic-bytes-d16-seed3";
  const std::string cache = tmp.file("cache.bin");
  const std::string data = tmp.file("data");

  REQUIRE(run_cli("build-dataset --synthetic-docs 60 --max-tokens 5 --embedder " + embedder +
                  " --cache " + cache + " --out " + data) == 0);

  std::ofstream cfg(tmp.file("train.json"));
  cfg << R"({"model": {"d_enc": 32, "enc_layers": 1, "dec_layers": 1, "heads": 2,
                        "d_ffn": 64, "proj_len": 2, "max_tokens": 5, "seed": 4},
              "train": {"lr": 2e-3, "epochs": 30, "batch": 32, "seed": 4, "log_every": 5}})";
  cfg.close();

  const std::string base_args = "train --role base --config " + tmp.file("train.json") +
                                " --dataset " + data + "/dataset.jsonl --embedder " + embedder +
                                " --cache " + cache + " --out " + tmp.file("base");
  REQUIRE(run_cli(base_args) == 0);
  CHECK(slurp(tmp.file("base") + "/metrics.jsonl").find("\"loss\"") != std::string::npos);

  SUBCASE("seed-fixed rerun reproduces the metrics stream") {
    const std::string first = slurp(tmp.file("base") + "/metrics.jsonl");
    REQUIRE(run_cli("train --role base --config " + tmp.file("train.json") + " --dataset " + data +
                    "/dataset.jsonl --embedder " + embedder + " --cache " + cache + " --out " +
                    tmp.file("base2")) == 0);
    CHECK(slurp(tmp.file("base2") + "/metrics.jsonl") == first);
  }

  SUBCASE("resume continues the step count") {
    const json before = json::parse(slurp(tmp.file("base") + "/config.json"));
    REQUIRE(run_cli(base_args + " --resume") == 0);
    const json after = json::parse(slurp(tmp.file("base") + "/config.json"));
    CHECK(after.at("step").get<long>() == 2 * before.at("step").get<long>());
  }

  SUBCASE("corrector training, inversion flags and config precedence") {
    REQUIRE(run_cli("train --role corrector --config " + tmp.file("train.json") + " --epochs 60" +
                    " --dataset " + data + "/dataset.jsonl --embedder " + embedder + " --cache " +
                    cache + " --out " + tmp.file("corr") + " --base-ckpt " + tmp.file("base")) ==
            0);
    // flag overrides the config file value: epochs 60 -> more steps than 30
    const json corr_cfg = json::parse(slurp(tmp.file("corr") + "/config.json"));
    CHECK(corr_cfg.at("step").get<long>() > 60);

    const std::string invert_common = " --dataset " + data + "/dataset.jsonl --embedder " +
                                      embedder + " --cache " + cache + " --base-ckpt " +
                                      tmp.file("base") + " --corrector-ckpt " + tmp.file("corr") +
                                      " --limit 10";
    // --steps 0 equals base-model evaluation: no corrector rounds in traces
    REQUIRE(run_cli("invert" + invert_common + " --steps 0 --out " + tmp.file("inv0")) == 0);
    std::ifstream traces(tmp.file("inv0") + "/traces.jsonl");
    std::string line;
    int round_lines = 0, summary_lines = 0;
    while (std::getline(traces, line)) {
      const json j = json::parse(line);
      if (j.contains("round")) ++round_lines;
      if (j.contains("final")) ++summary_lines;
    }
    CHECK(round_lines == 10);  // one round-0 line per example
    CHECK(summary_lines == 10);

    // invalid decode parameters exit 2
    CHECK(run_cli("invert" + invert_common + " --steps 3 --beam-width 0 --out " +
                  tmp.file("bad")) == 2);
    // no-feedback with beam width > 1 is a config error
    CHECK(run_cli("invert" + invert_common + " --steps 3 --beam-width 4 --no-feedback --out " +
                  tmp.file("bad2")) == 2);
    // fixed-text initializer via flag
    REQUIRE(run_cli("invert" + invert_common + " --steps 1 --init fixed:abcd --out " +
                    tmp.file("invf")) == 0);
    const json manifest = json::parse(slurp(tmp.file("invf") + "/manifest.json"));
    CHECK(manifest.at("config").at("init") == "fixed:abcd");

    // evaluate writes report json + text + scatter
    REQUIRE(run_cli("evaluate" + invert_common + " --steps 2 --out " + tmp.file("ev")) == 0);
    CHECK(slurp(tmp.file("ev") + "/report.txt").find("full-scale reference") != std::string::npos);
    const json report = json::parse(slurp(tmp.file("ev") + "/report.json"));
    CHECK(report.at("n_examples").get<long>() == 10);
    CHECK(slurp(tmp.file("ev") + "/cos_vs_bleu.svg").find("<svg") != std::string::npos);

    // defend honors the lambda grid from config and writes csv + plot
    std::ofstream dcfg(tmp.file("defend.json"));
    dcfg << R"({"lambdas": [0.0, 0.5]})";
    dcfg.close();
    REQUIRE(run_cli("defend --config " + tmp.file("defend.json") + invert_common +
                    " --steps 2 --out " + tmp.file("def")) == 0);
    const std::string csv = slurp(tmp.file("def") + "/tradeoff.csv");
    CHECK(csv.find("lambda,ndcg,bleu,tf1,exact,cos") == 0);
    CHECK(csv.find("\n0,") != std::string::npos);
    CHECK(csv.find("\n0.5,") != std::string::npos);
    CHECK(slurp(tmp.file("def") + "/tradeoff.svg").find("<svg") != std::string::npos);
  }
}
