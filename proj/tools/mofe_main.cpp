// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Operator entry point: merge expert checkpoints into a routed
// mixture-of-frozen-experts model, train it with the freeze policy
// applied, score multiple-choice tasks, and reproduce the parameter
// accounting for the supported presets.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mofe/demo.hpp"
#include "mofe/evaluator.hpp"
#include "mofe/merge.hpp"
#include "mofe/model_io.hpp"
#include "mofe/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw mofe::IoError("cannot open config: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw mofe::FormatError(path + " is not valid JSON: " + e.what());
  }
  return j;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw mofe::IoError("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

// Dot-path override: --set train.learning_rate=1e-3. Values parse as JSON
// first and fall back to plain strings.
void apply_override(json& root, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw mofe::ConfigError("--set expects key.path=value, got: " + assignment, "--set");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string value_str = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(value_str);
  } catch (const json::exception&) {
    value = value_str;
  }
  json* node = &root;
  std::size_t begin = 0;
  std::vector<std::string> keys;
  while (begin <= path.size()) {
    auto dot = path.find('.', begin);
    if (dot == std::string::npos) dot = path.size();
    keys.push_back(path.substr(begin, dot - begin));
    begin = dot + 1;
  }
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    const std::string& k = keys[i];
    if (node->is_array()) {
      node = &(*node)[std::stoul(k)];
    } else {
      node = &(*node)[k];
    }
  }
  if (node->is_array()) {
    (*node)[std::stoul(keys.back())] = value;
  } else {
    (*node)[keys.back()] = value;
  }
}

mofe::FreezeManifest manifest_from_config_value(const json& v, const std::string& where) {
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "mofe" || s == "full" || s == "ffn-only") return mofe::manifest_preset(s);
    return mofe::manifest_from_json(load_json_file(s), where);
  }
  if (v.is_object()) return mofe::manifest_from_json(v, where);
  throw mofe::ConfigError("manifest must be a preset name, a file path, or an object", where);
}

int cmd_merge(const std::string& config_path, const std::string& prompts_path,
              const std::vector<std::string>& overrides, bool seed_set, std::uint64_t seed,
              const std::string& out_dir) {
  json spec_json = load_json_file(config_path);
  for (const auto& o : overrides) apply_override(spec_json, o);
  if (seed_set) spec_json["seed"] = seed;
  mofe::MergeSpec spec = mofe::merge_spec_from_json(spec_json);
  if (!prompts_path.empty()) mofe::load_prompt_sets_jsonl(spec, prompts_path);

  fs::create_directories(out_dir);
  mofe::MergeOutput out = mofe::merge_models(spec);
  const std::string merged_path = out_dir + "/merged.mofe";
  mofe::save_archive(out.archive, merged_path);
  mofe::save_meta(out.meta, merged_path);
  write_json_file(out.report, out_dir + "/merge_report.json");
  write_json_file(mofe::merge_spec_to_json(spec), out_dir + "/resolved_config.json");

  std::cout << json{{"merged", merged_path},
                    {"tensors", out.archive.size()},
                    {"n_experts", out.meta.n_experts},
                    {"m", out.meta.top_m},
                    {"report", out_dir + "/merge_report.json"}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, bool seed_set,
              std::uint64_t seed, std::string out_dir) {
  json cfg_json = load_json_file(config_path);
  for (const auto& o : overrides) apply_override(cfg_json, o);
  if (seed_set) cfg_json["train"]["seed"] = seed;
  if (!cfg_json.contains("model")) throw mofe::ConfigError("train config requires model path", "model");
  if (!cfg_json.contains("dataset")) throw mofe::ConfigError("train config requires dataset path", "dataset");
  if (out_dir.empty()) out_dir = cfg_json.value("out", "");
  if (out_dir.empty()) throw mofe::ConfigError("no output directory (--out or config out)", "out");

  mofe::TrainConfig train_cfg = mofe::train_config_from_json(cfg_json.value("train", json::object()), "train");

  mofe::ModelMeta meta;
  mofe::DecoderT<float> model = mofe::load_model<float>(cfg_json.at("model").get<std::string>(), &meta);
  // The checkpoint sidecar carries the freeze policy it was built with;
  // an explicit manifest in the train config overrides it.
  mofe::FreezeManifest manifest = cfg_json.contains("manifest")
                                      ? manifest_from_config_value(cfg_json.at("manifest"), "manifest")
                                      : meta.freeze;
  mofe::Dataset dataset = mofe::load_dataset_jsonl(cfg_json.at("dataset").get<std::string>(), train_cfg.loss_mode);

  mofe::RunOptions options;
  options.out_dir = out_dir;
  options.resume_from = cfg_json.value("resume", "");
  fs::create_directories(out_dir);
  cfg_json["out"] = out_dir;
  write_json_file(cfg_json, out_dir + "/resolved_config.json");

  mofe::TrainingLog log = mofe::run_training(model, meta, dataset, train_cfg, manifest, options);

  json summary{{"steps", log.records.size()},
               {"final_checkpoint", out_dir + "/final.mofe"},
               {"log", out_dir + "/log.csv"}};
  if (!log.records.empty()) {
    summary["first_loss"] = log.records.front().loss;
    summary["final_loss"] = log.records.back().loss;
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_eval(const std::string& task_path, const std::string& model_path, bool per_item, bool length_normalize,
             bool routing_stats, const std::string& out_dir) {
  auto items = mofe::load_mc_task_jsonl(task_path);
  mofe::DecoderT<float> model = mofe::load_model<float>(model_path);
  mofe::RoutingStats stats;
  mofe::EvalResult result = mofe::mc_accuracy(model, items, length_normalize, per_item,
                                              routing_stats && model.is_moe() ? &stats : nullptr);
  json out = mofe::eval_result_to_json(result, per_item);
  out["task"] = task_path;
  out["model"] = model_path;
  if (routing_stats && model.is_moe()) out["routing_stats"] = stats.to_json();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_json_file(out, out_dir + "/results.json");
    write_json_file(json{{"task", task_path},
                         {"model", model_path},
                         {"per_item", per_item},
                         {"length_normalize", length_normalize},
                         {"routing_stats", routing_stats}},
                    out_dir + "/resolved_config.json");
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_count_params(const std::string& preset, const std::string& config_path, int experts, bool dense,
                     const std::string& manifest_arg, bool as_json, const std::string& out_dir) {
  mofe::ModelConfig cfg;
  if (!config_path.empty()) {
    cfg = mofe::config_from_json(load_json_file(config_path), "model");
  } else {
    cfg = mofe::preset_config(preset);
  }
  mofe::FreezeManifest manifest = manifest_from_config_value(json(manifest_arg), "manifest");
  const int n_experts = dense ? 0 : experts;
  if (!dense && experts < 1) {
    throw mofe::ConfigError("--experts must be >= 1 (or pass --dense)", "experts");
  }
  mofe::ParamReport report = mofe::count_params(cfg, n_experts, manifest);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_json_file(mofe::param_report_to_json(report), out_dir + "/params.json");
    write_json_file(json{{"preset", preset},
                         {"config", config_path},
                         {"experts", experts},
                         {"dense", dense},
                         {"manifest", manifest_arg}},
                    out_dir + "/resolved_config.json");
  }
  if (as_json) {
    std::cout << mofe::param_report_to_json(report).dump(2) << "\n";
  } else {
    std::cout << mofe::param_report_table(report);
  }
  return 0;
}

int cmd_inspect(const std::string& path, bool as_json) {
  mofe::ArchiveListing listing = mofe::inspect_archive(path);
  if (as_json) {
    json entries = json::array();
    for (const auto& e : listing.entries) {
      entries.push_back({{"name", e.name},
                         {"dtype", mofe::dtype_name(e.dtype)},
                         {"shape", e.dims},
                         {"bytes", e.length},
                         {"offset", e.offset}});
    }
    json out{{"version", listing.version},
             {"tensors", listing.entries.size()},
             {"file_size", listing.file_size},
             {"entries", entries}};
    if (fs::exists(mofe::sidecar_path(path))) {
      out["sidecar"] = mofe::meta_to_json(mofe::load_meta(path));
    }
    std::cout << out.dump(2) << "\n";
    return 0;
  }
  std::cout << path << ": version " << listing.version << ", " << listing.entries.size() << " tensors, "
            << listing.file_size << " bytes\n";
  for (const auto& e : listing.entries) {
    std::cout << "  " << e.name << "  " << mofe::dtype_name(e.dtype) << "  " << mofe::shape_str(e.dims) << "  "
              << e.length << " bytes\n";
  }
  if (fs::exists(mofe::sidecar_path(path))) {
    mofe::ModelMeta meta = mofe::load_meta(path);
    std::cout << "sidecar: n_experts=" << meta.n_experts << " top_m=" << meta.top_m << " dtype="
              << mofe::dtype_name(meta.dtype) << " hash=" << mofe::meta_hash(meta) << "\n";
  }
  return 0;
}

int cmd_demo_transfer(const std::string& out_dir, const std::string& seeds_csv, bool quick) {
  std::vector<std::uint64_t> seeds;
  std::size_t begin = 0;
  while (begin <= seeds_csv.size()) {
    auto comma = seeds_csv.find(',', begin);
    if (comma == std::string::npos) comma = seeds_csv.size();
    if (comma > begin) seeds.push_back(std::stoull(seeds_csv.substr(begin, comma - begin)));
    begin = comma + 1;
  }
  mofe::TransferOptions options;
  if (quick) {
    options.expert_steps = 120;
    options.tune_steps = 20;
  }
  fs::create_directories(out_dir);
  write_json_file(json{{"seeds", seeds}, {"quick", quick}}, out_dir + "/resolved_config.json");
  mofe::TransferReport report = mofe::demo_transfer(out_dir, seeds, options);
  write_json_file(report.to_json(), out_dir + "/transfer_report.json");
  std::cout << report.to_json().dump(2) << "\n";
  return report.pass ? 0 : 3;
}

int cmd_demo_accounting() {
  const mofe::ModelConfig cfg = mofe::preset_config("tinyllama-1.1b");
  std::cout << "tinyllama-1.1b preset, expert-frozen vs full fine-tuning\n\n";
  std::cout << "experts  policy  trainable   total\n";
  std::cout << "-------  ------  ---------  ------\n";
  char line[128];
  for (int n : {2, 4, 8}) {
    auto frozen = mofe::count_params(cfg, n, mofe::manifest_mofe());
    auto full = mofe::count_params(cfg, n, mofe::manifest_full());
    std::snprintf(line, sizeof(line), "%7d  %-6s  %8.2fB  %5.2fB\n", n, "mofe", frozen.table_trainable_b,
                  frozen.table_total_b);
    std::cout << line;
    std::snprintf(line, sizeof(line), "%7d  %-6s  %8.2fB  %5.2fB\n", n, "full", full.table_trainable_b,
                  full.table_total_b);
    std::cout << line;
  }
  auto ffn = mofe::count_params(cfg, 1, mofe::manifest_mofe());
  std::cout << "\nffn per expert: " << ffn.ffn_per_expert << " (" << ffn.ffn_per_expert_b << "B)\n";
  return 0;
}

int cmd_demo_make_model(const std::string& preset, const std::string& config_path, int experts, int top_m,
                        std::uint64_t seed, const std::string& out_path) {
  mofe::ModelConfig cfg =
      config_path.empty() ? mofe::preset_config(preset) : mofe::config_from_json(load_json_file(config_path));
  mofe::DecoderT<float> model = mofe::init_decoder<float>(cfg, experts, top_m, seed);
  mofe::ModelMeta meta = mofe::make_meta(model);
  if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
  mofe::save_model(model, meta, out_path);
  std::cout << json{{"model", out_path}, {"n_experts", experts}, {"top_m", top_m}, {"seed", seed}}.dump(2)
            << "\n";
  return 0;
}

int cmd_demo_make_task(const std::string& kind, std::uint64_t seed, const std::string& out_path,
                       const std::string& prefix, int items, const std::string& train_out) {
  if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
  if (kind == "random") {
    mofe::save_mc_task_jsonl(mofe::make_random_mc_task(seed, static_cast<std::size_t>(items)), out_path);
  } else if (kind == "kv") {
    mofe::SyntheticTask task = mofe::make_kv_task(prefix, seed);
    mofe::save_mc_task_jsonl(task.items, out_path);
    if (!train_out.empty()) {
      std::ofstream os(train_out, std::ios::trunc);
      if (!os) throw mofe::IoError("cannot open for writing: " + train_out);
      for (const auto& s : task.train.samples) {
        os << json{{"prompt", s.prompt_tokens}, {"completion", s.completion_tokens}}.dump() << "\n";
      }
    }
  } else if (kind == "corpus") {
    mofe::Dataset ds = mofe::make_memorization_corpus(seed);
    std::ofstream os(out_path, std::ios::trunc);
    if (!os) throw mofe::IoError("cannot open for writing: " + out_path);
    for (const auto& s : ds.samples) os << json{{"text", s.completion_tokens}}.dump() << "\n";
  } else {
    throw mofe::ConfigError("unknown task kind: " + kind + " (expected random|kv|corpus)", "kind");
  }
  std::cout << json{{"task", out_path}, {"kind", kind}, {"seed", seed}}.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixture-of-frozen-experts toolkit"};
  app.require_subcommand(1);

  std::string config_path, prompts_path, out_dir, task_path, model_path, archive_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool per_item = false, length_normalize = false, as_json = false, dense = false, quick = false;
  bool routing_stats = false;
  std::string preset = "tinyllama-1.1b", manifest_arg = "mofe";
  int experts = 1, top_m = 0, items = 400;
  std::string seeds_csv = "1,2,3", kind = "random", prefix = "A", train_out;

  auto* merge = app.add_subcommand("merge", "merge a base and expert checkpoints into a MoE checkpoint");
  merge->add_option("--config", config_path, "merge spec JSON")->required();
  merge->add_option("--prompts", prompts_path, "prompt sets JSONL (one object per expert)");
  merge->add_option("--set", overrides, "dot-path config override key=value");
  auto* merge_seed = merge->add_option("--seed", seed, "override spec seed");
  merge->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a checkpoint under a freeze manifest");
  train->add_option("--config", config_path, "train config JSON")->required();
  train->add_option("--set", overrides, "dot-path config override key=value");
  auto* train_seed = train->add_option("--seed", seed, "override train seed");
  train->add_option("--out", out_dir, "output directory (overrides config out)");

  auto* eval_cmd = app.add_subcommand("eval", "score a multiple-choice task by log-likelihood");
  eval_cmd->add_option("--task", task_path, "task JSONL")->required();
  eval_cmd->add_option("--model", model_path, "model checkpoint")->required();
  eval_cmd->add_flag("--per-item", per_item, "include per-item scores");
  eval_cmd->add_flag("--length-normalize", length_normalize, "normalize scores by choice length");
  eval_cmd->add_flag("--routing-stats", routing_stats, "include per-layer expert selection counts");
  eval_cmd->add_option("--out", out_dir, "output directory for results.json");

  auto* count = app.add_subcommand("count-params", "exact parameter accounting for a config");
  count->add_option("--preset", preset, "config preset name");
  count->add_option("--config", config_path, "model config JSON (overrides preset)");
  count->add_option("--experts", experts, "number of experts");
  count->add_flag("--dense", dense, "dense model (no experts, no router)");
  count->add_option("--manifest", manifest_arg, "freeze manifest: mofe|full|ffn-only|path");
  count->add_flag("--json", as_json, "print the JSON report");
  count->add_option("--out", out_dir, "output directory for params.json");

  auto* inspect = app.add_subcommand("inspect", "list archive contents without loading payloads");
  inspect->add_option("path", archive_path, "archive path")->required();
  inspect->add_flag("--json", as_json, "print JSON");

  auto* demo = app.add_subcommand("demo", "demo pipelines");
  demo->require_subcommand(1);
  auto* transfer = demo->add_subcommand("transfer", "two-expert knowledge-transfer pipeline");
  transfer->add_option("--out", out_dir, "output directory")->required();
  transfer->add_option("--seeds", seeds_csv, "comma-separated seeds (default 1,2,3)");
  transfer->add_flag("--quick", quick, "shorter training budget");
  auto* accounting = demo->add_subcommand("accounting", "parameter accounting table for the preset sizes");
  auto* make_model = demo->add_subcommand("make-model", "write a fresh random checkpoint");
  make_model->add_option("--preset", preset, "config preset");
  make_model->add_option("--config", config_path, "model config JSON");
  make_model->add_option("--experts", experts, "number of experts (0 = dense)")->default_val(0);
  make_model->add_option("--top-m", top_m, "routing width for MoE models");
  make_model->add_option("--seed", seed, "init seed");
  make_model->add_option("--out", out_dir, "output checkpoint path")->required();
  auto* make_task = demo->add_subcommand("make-task", "write a synthetic task file");
  make_task->add_option("--kind", kind, "random|kv|corpus");
  make_task->add_option("--seed", seed, "task seed");
  make_task->add_option("--items", items, "item count for random tasks");
  make_task->add_option("--prefix", prefix, "kv task prefix");
  make_task->add_option("--out", out_dir, "output task path")->required();
  make_task->add_option("--out-train", train_out, "also write kv training JSONL here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cout << json{{"error", {{"kind", "cli"}, {"message", e.what()}, {"path", ""}}}}.dump(2) << "\n";
    return 1;
  }

  try {
    if (merge->parsed()) {
      return cmd_merge(config_path, prompts_path, overrides, merge_seed->count() > 0, seed, out_dir);
    }
    if (train->parsed()) {
      return cmd_train(config_path, overrides, train_seed->count() > 0, seed, out_dir);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(task_path, model_path, per_item, length_normalize, routing_stats, out_dir);
    }
    if (count->parsed()) {
      return cmd_count_params(preset, config_path, experts, dense, manifest_arg, as_json, out_dir);
    }
    if (inspect->parsed()) return cmd_inspect(archive_path, as_json);
    if (demo->parsed()) {
      if (transfer->parsed()) return cmd_demo_transfer(out_dir, seeds_csv, quick);
      if (accounting->parsed()) return cmd_demo_accounting();
      if (make_model->parsed()) {
        return cmd_demo_make_model(preset, config_path, experts, top_m, seed, out_dir);
      }
      if (make_task->parsed()) return cmd_demo_make_task(kind, seed, out_dir, prefix, items, train_out);
    }
    std::cout << json{{"error", {{"kind", "cli"}, {"message", "no subcommand"}, {"path", ""}}}}.dump(2) << "\n";
    return 1;
  } catch (const mofe::Error& e) {
    std::cout << json{{"error", {{"kind", e.kind()}, {"message", e.what()}, {"path", e.json_path()}}}}.dump(2)
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cout << json{{"error", {{"kind", "internal"}, {"message", e.what()}, {"path", ""}}}}.dump(2) << "\n";
    return 2;
  }
}
