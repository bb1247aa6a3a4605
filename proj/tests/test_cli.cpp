// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks of the CLI binary (path in the MOFE_BIN environment
// variable, set by CTest).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "helpers.hpp"
#include "mofe/archive.hpp"

using nlohmann::json;
using mofe::testing::TempDir;

namespace {

std::string mofe_bin() {
  const char* bin = std::getenv("MOFE_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "MOFE_BIN must point at the CLI binary");
  return bin;
}

struct CliResult {
  int exit_code = 0;
  std::string stdout_text;
};

CliResult run_cli(const std::string& args, const TempDir& dir, const std::string& tag) {
  const std::string out_file = dir.file("cli_" + tag + ".out");
  const std::string cmd = mofe_bin() + " " + args + " > " + out_file + " 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  std::ifstream is(out_file);
  std::stringstream ss;
  ss << is.rdbuf();
  return {WEXITSTATUS(rc), ss.str()};
}

json parse_stdout(const CliResult& result) { return json::parse(result.stdout_text); }

}  // namespace

TEST_CASE("count-params reproduces the preset accounting") {
  TempDir dir("cli_count");
  auto result = run_cli("count-params --preset tinyllama-1.1b --experts 4 --manifest mofe --json", dir, "count");
  REQUIRE(result.exit_code == 0);
  json report = parse_stdout(result);
  CHECK(report["table_b"]["trainable"].get<double>() == doctest::Approx(0.34));
  CHECK(report["table_b"]["total"].get<double>() == doctest::Approx(3.38));
  CHECK(report["exact"]["total"].get<std::uint64_t>() == 3384027136ull);

  auto table = run_cli("count-params --preset tinyllama-1.1b --experts 4 --manifest mofe", dir, "table");
  REQUIRE(table.exit_code == 0);
  CHECK(table.stdout_text.find("0.34B") != std::string::npos);
  CHECK(table.stdout_text.find("3.38B") != std::string::npos);
}

TEST_CASE("merge with one expert then eval matches the dense model eval") {
  TempDir dir("cli_pipeline");
  // Using the same checkpoint as base and expert makes the n=1 merge
  // functionally identical to the dense model itself.
  auto mk = run_cli("demo make-model --preset toy-byte --seed 5 --out " + dir.file("dense.mofe"), dir, "mk");
  REQUIRE(mk.exit_code == 0);

  json spec{{"base", dir.file("dense.mofe")},
            {"experts", json::array({{{"name", "only"}, {"archive", dir.file("dense.mofe")},
                                      {"positive_prompts", json::array({"alpha"})}}})},
            {"m", 1},
            {"gate_mode", "hidden"}};
  {
    std::ofstream os(dir.file("spec.json"));
    os << spec.dump();
  }
  auto merged = run_cli("merge --config " + dir.file("spec.json") + " --out " + dir.file("merge_out"), dir, "merge");
  REQUIRE(merged.exit_code == 0);
  CHECK(std::ifstream(dir.file("merge_out/resolved_config.json")).good());
  CHECK(std::ifstream(dir.file("merge_out/merge_report.json")).good());

  auto task = run_cli("demo make-task --kind random --items 60 --seed 9 --out " + dir.file("task.jsonl"), dir,
                      "task");
  REQUIRE(task.exit_code == 0);

  auto eval_dense = run_cli("eval --task " + dir.file("task.jsonl") + " --model " + dir.file("dense.mofe"),
                            dir, "eval_dense");
  auto eval_moe = run_cli("eval --task " + dir.file("task.jsonl") + " --model " +
                              dir.file("merge_out/merged.mofe"),
                          dir, "eval_moe");
  REQUIRE(eval_dense.exit_code == 0);
  REQUIRE(eval_moe.exit_code == 0);
  CHECK(parse_stdout(eval_dense)["accuracy"] == parse_stdout(eval_moe)["accuracy"]);
}

TEST_CASE("train with zero steps leaves the checkpoint bit-identical") {
  TempDir dir("cli_train0");
  REQUIRE(run_cli("demo make-model --preset toy-byte --experts 2 --top-m 2 --seed 7 --out " +
                      dir.file("model.mofe"),
                  dir, "mk")
              .exit_code == 0);
  REQUIRE(run_cli("demo make-task --kind corpus --seed 3 --out " + dir.file("corpus.jsonl"), dir, "corpus")
              .exit_code == 0);

  json cfg{{"model", dir.file("model.mofe")},
           {"dataset", dir.file("corpus.jsonl")},
           {"manifest", "mofe"},
           {"train", {{"total_steps", 0}, {"loss_mode", "pretrain"}}}};
  {
    std::ofstream os(dir.file("train.json"));
    os << cfg.dump();
  }
  auto trained = run_cli("train --config " + dir.file("train.json") + " --out " + dir.file("run"), dir, "train");
  REQUIRE(trained.exit_code == 0);
  mofe::TensorArchive before = mofe::load_archive(dir.file("model.mofe"));
  mofe::TensorArchive after = mofe::load_archive(dir.file("run/final.mofe"));
  REQUIRE(before.size() == after.size());
  for (const auto& [name, t] : before.tensors()) CHECK(after.at(name).bytes == t.bytes);
  CHECK(std::ifstream(dir.file("run/resolved_config.json")).good());
}

TEST_CASE("train honors --set overrides and writes the log") {
  TempDir dir("cli_train");
  REQUIRE(run_cli("demo make-model --preset toy-byte --experts 2 --top-m 2 --seed 11 --out " +
                      dir.file("model.mofe"),
                  dir, "mk")
              .exit_code == 0);
  REQUIRE(run_cli("demo make-task --kind corpus --seed 13 --out " + dir.file("corpus.jsonl"), dir, "corpus")
              .exit_code == 0);
  json cfg{{"model", dir.file("model.mofe")},
           {"dataset", dir.file("corpus.jsonl")},
           {"manifest", "mofe"},
           {"train",
            {{"total_steps", 3}, {"loss_mode", "pretrain"}, {"learning_rate", 1e-3}, {"batch_size", 2}}}};
  {
    std::ofstream os(dir.file("train.json"));
    os << cfg.dump();
  }
  auto result = run_cli("train --config " + dir.file("train.json") + " --set train.total_steps=2 --out " +
                            dir.file("run"),
                        dir, "train");
  REQUIRE(result.exit_code == 0);
  CHECK(parse_stdout(result)["steps"].get<int>() == 2);
  std::ifstream log(dir.file("run/log.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(log, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 3);  // header + 2 steps
  json resolved = json::parse(std::ifstream(dir.file("run/resolved_config.json")));
  CHECK(resolved["train"]["total_steps"].get<int>() == 2);
}

TEST_CASE("unknown flags and invalid configs produce machine-readable errors") {
  TempDir dir("cli_errors");
  auto unknown = run_cli("count-params --nonsense", dir, "unknown");
  CHECK(unknown.exit_code != 0);
  CHECK(parse_stdout(unknown)["error"]["kind"] == "cli");

  {
    std::ofstream os(dir.file("bad_train.json"));
    os << json{{"dataset", "nowhere.jsonl"}}.dump();
  }
  auto bad = run_cli("train --config " + dir.file("bad_train.json") + " --out " + dir.file("x"), dir, "bad");
  CHECK(bad.exit_code != 0);
  json err = parse_stdout(bad);
  CHECK(err["error"]["kind"] == "config");
  CHECK(err["error"]["path"] == "model");

  {
    std::ofstream os(dir.file("bad_field.json"));
    os << json{{"model", "m.mofe"}, {"dataset", "d.jsonl"}, {"train", {{"batch_size", -1}}}}.dump();
  }
  auto bad_field =
      run_cli("train --config " + dir.file("bad_field.json") + " --out " + dir.file("y"), dir, "badf");
  CHECK(bad_field.exit_code != 0);
  CHECK(parse_stdout(bad_field)["error"]["path"] == "train.batch_size");
}

TEST_CASE("MOFE_THREADS does not change results") {
  TempDir dir("cli_threads");
  REQUIRE(run_cli("demo make-model --preset toy-byte --experts 2 --top-m 2 --seed 21 --out " +
                      dir.file("m.mofe"),
                  dir, "mk")
              .exit_code == 0);
  REQUIRE(run_cli("demo make-task --kind random --items 30 --seed 23 --out " + dir.file("t.jsonl"), dir, "task")
              .exit_code == 0);
  const std::string eval_args =
      "eval --task " + dir.file("t.jsonl") + " --model " + dir.file("m.mofe") + " --per-item";
  const std::string base_cmd = mofe_bin() + " " + eval_args;
  REQUIRE(std::system(("MOFE_THREADS=1 " + base_cmd + " > " + dir.file("one.json")).c_str()) == 0);
  REQUIRE(std::system(("MOFE_THREADS=4 " + base_cmd + " > " + dir.file("four.json")).c_str()) == 0);
  std::stringstream a, b;
  a << std::ifstream(dir.file("one.json")).rdbuf();
  b << std::ifstream(dir.file("four.json")).rdbuf();
  CHECK(a.str() == b.str());
}

TEST_CASE("demo transfer runs end to end") {
  TempDir dir("cli_transfer");
  auto result = run_cli("demo transfer --quick --seeds 1 --out " + dir.file("transfer"), dir, "transfer");
  REQUIRE(result.exit_code == 0);
  json report = json::parse(std::ifstream(dir.file("transfer/transfer_report.json")));
  CHECK(report["runs"].size() == 1);
  CHECK(report["pass"].get<bool>());
  const auto& acc = report["runs"][0]["task_a_accuracy"];
  CHECK(acc["two_a_experts"].get<double>() >= acc["one_a_expert"].get<double>());
  CHECK(acc["one_a_expert"].get<double>() >= acc["zero_a_experts"].get<double>());
}

TEST_CASE("inspect lists tensors without touching payloads") {
  TempDir dir("cli_inspect");
  REQUIRE(run_cli("demo make-model --preset toy-byte --seed 1 --out " + dir.file("m.mofe"), dir, "mk")
              .exit_code == 0);
  auto result = run_cli("inspect " + dir.file("m.mofe") + " --json", dir, "inspect");
  REQUIRE(result.exit_code == 0);
  json listing = parse_stdout(result);
  CHECK(listing["tensors"].get<int>() > 0);
  bool found_embedding = false;
  for (const auto& e : listing["entries"]) found_embedding |= e["name"] == "embedding.weight";
  CHECK(found_embedding);
  CHECK(listing["sidecar"]["n_experts"].get<int>() == 0);
}
