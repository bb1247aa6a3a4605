// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mofe/evaluator.hpp"

#include <fstream>

#include "mofe/errors.hpp"

namespace mofe {

namespace {

std::vector<int> tokens_from_value(const nlohmann::json& v, const std::string& where) {
  if (v.is_string()) return ByteTokenizer::encode(v.get<std::string>());
  if (v.is_array()) {
    std::vector<int> ids;
    for (const auto& x : v) {
      if (!x.is_number_integer()) throw ConfigError("token arrays must hold integers", where);
      ids.push_back(x.get<int>());
    }
    return ids;
  }
  throw ConfigError("expected a string or an array of token ids", where);
}

}  // namespace

std::vector<MultipleChoiceItem> mc_task_from_json_lines(const std::vector<nlohmann::json>& rows,
                                                        const std::string& path_for_errors) {
  std::vector<MultipleChoiceItem> items;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const std::string where = path_for_errors + ":" + std::to_string(i + 1);
    if (!row.contains("prompt") || !row.contains("choices") || !row.contains("answer")) {
      throw ConfigError("task rows need prompt, choices and answer", where);
    }
    MultipleChoiceItem item;
    item.prompt = tokens_from_value(row.at("prompt"), where + ".prompt");
    for (const auto& c : row.at("choices")) {
      item.choices.push_back(tokens_from_value(c, where + ".choices"));
    }
    item.answer_index = row.at("answer").get<int>();
    if (item.choices.size() < 2) throw ConfigError("task item needs at least 2 choices", where + ".choices");
    if (item.answer_index < 0 || static_cast<std::size_t>(item.answer_index) >= item.choices.size()) {
      throw ConfigError("answer index out of range", where + ".answer");
    }
    items.push_back(std::move(item));
  }
  if (items.empty()) throw ConfigError("task file has no items", path_for_errors);
  return items;
}

std::vector<MultipleChoiceItem> load_mc_task_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open task file: " + path);
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
  }
  return mc_task_from_json_lines(rows, path);
}

void save_mc_task_jsonl(const std::vector<MultipleChoiceItem>& items, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (const auto& item : items) {
    nlohmann::json row{{"prompt", item.prompt}, {"choices", item.choices}, {"answer", item.answer_index}};
    os << row.dump() << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

nlohmann::json eval_result_to_json(const EvalResult& result, bool include_per_item) {
  nlohmann::json j{{"accuracy", result.accuracy}, {"n", result.n}};
  if (include_per_item) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& ir : result.per_item) {
      items.push_back({{"scores", ir.scores}, {"picked", ir.picked}, {"correct", ir.correct}});
    }
    j["per_item"] = items;
  }
  return j;
}

}  // namespace mofe
