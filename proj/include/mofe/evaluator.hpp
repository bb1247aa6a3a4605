// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "mofe/decoder.hpp"
#include "mofe/tokenizer.hpp"

namespace mofe {

struct MultipleChoiceItem {
  std::vector<int> prompt;
  std::vector<std::vector<int>> choices;
  int answer_index = 0;
};

// Task file: JSONL of {"prompt": ..., "choices": [...], "answer": n} with
// strings byte-tokenized and arrays taken as token ids.
std::vector<MultipleChoiceItem> load_mc_task_jsonl(const std::string& path);
std::vector<MultipleChoiceItem> mc_task_from_json_lines(const std::vector<nlohmann::json>& rows,
                                                        const std::string& path_for_errors = "<memory>");
void save_mc_task_jsonl(const std::vector<MultipleChoiceItem>& items, const std::string& path);

namespace eval_detail {

// log softmax over one logits row, computed in double.
template <typename T>
double log_prob_of(const std::vector<T>& logits, std::size_t row, std::size_t vocab, int token) {
  const T* base = logits.data() + row * vocab;
  double mx = static_cast<double>(base[0]);
  for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, static_cast<double>(base[j]));
  double denom = 0.0;
  for (std::size_t j = 0; j < vocab; ++j) denom += std::exp(static_cast<double>(base[j]) - mx);
  return static_cast<double>(base[static_cast<std::size_t>(token)]) - mx - std::log(denom);
}

}  // namespace eval_detail

// Sum of log-probabilities of the choice tokens conditioned on
// BOS + prompt (+ the preceding choice tokens). Optionally normalized by
// the choice length.
template <typename T>
double choice_loglikelihood(const DecoderT<T>& model, const std::vector<int>& prompt,
                            const std::vector<int>& choice, bool length_normalize = false,
                            RoutingStats* stats = nullptr) {
  if (choice.empty()) throw ContractError("choice_loglikelihood: empty choice");
  std::vector<int> ids;
  ids.reserve(1 + prompt.size() + choice.size());
  ids.push_back(ByteTokenizer::kBos);
  ids.insert(ids.end(), prompt.begin(), prompt.end());
  ids.insert(ids.end(), choice.begin(), choice.end());
  if (ids.size() > model.config.max_seq_len) {
    throw ContractError("prompt+choice length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                        std::to_string(model.config.max_seq_len));
  }
  Tensor<T> logits = forward(model, ids, stats);
  const std::size_t vocab = model.config.vocab_size;
  const std::size_t choice_begin = 1 + prompt.size();
  double total = 0.0;
  for (std::size_t p = choice_begin; p < ids.size(); ++p) {
    total += eval_detail::log_prob_of(logits.data(), p - 1, vocab, ids[p]);
  }
  if (length_normalize) total /= static_cast<double>(choice.size());
  return total;
}

struct ItemResult {
  std::vector<double> scores;
  int picked = 0;
  bool correct = false;
};

struct EvalResult {
  double accuracy = 0.0;
  std::size_t n = 0;
  std::vector<ItemResult> per_item;
};

// Fraction of items whose argmax choice log-likelihood is the answer.
// Ties pick the lower index (and count as wrong unless that is the
// answer).
template <typename T>
EvalResult mc_accuracy(const DecoderT<T>& model, const std::vector<MultipleChoiceItem>& items,
                       bool length_normalize = false, bool keep_per_item = false,
                       RoutingStats* stats = nullptr) {
  if (items.empty()) throw ContractError("mc_accuracy: no items");
  EvalResult result;
  result.n = items.size();
  std::size_t correct = 0;
  for (const auto& item : items) {
    if (item.choices.size() < 2) throw ContractError("mc_accuracy: item needs at least 2 choices");
    if (item.answer_index < 0 || static_cast<std::size_t>(item.answer_index) >= item.choices.size()) {
      throw ContractError("mc_accuracy: answer index out of range");
    }
    ItemResult ir;
    ir.scores.reserve(item.choices.size());
    for (const auto& choice : item.choices) {
      ir.scores.push_back(choice_loglikelihood(model, item.prompt, choice, length_normalize, stats));
    }
    ir.picked = 0;
    for (std::size_t c = 1; c < ir.scores.size(); ++c) {
      if (ir.scores[c] > ir.scores[static_cast<std::size_t>(ir.picked)]) ir.picked = static_cast<int>(c);
    }
    ir.correct = ir.picked == item.answer_index;
    correct += ir.correct ? 1 : 0;
    if (keep_per_item) result.per_item.push_back(std::move(ir));
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(items.size());
  return result;
}

// exp(mean NLL per predicted token) over BOS-prefixed sequences.
template <typename T>
double perplexity(const DecoderT<T>& model, const std::vector<std::vector<int>>& sequences) {
  if (sequences.empty()) throw ContractError("perplexity: no sequences");
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& seq : sequences) {
    if (seq.empty()) continue;
    std::vector<int> ids;
    ids.reserve(seq.size() + 1);
    ids.push_back(ByteTokenizer::kBos);
    ids.insert(ids.end(), seq.begin(), seq.end());
    Tensor<T> logits = forward(model, ids);
    for (std::size_t p = 1; p < ids.size(); ++p) {
      nll -= eval_detail::log_prob_of(logits.data(), p - 1, model.config.vocab_size, ids[p]);
      ++tokens;
    }
  }
  if (tokens == 0) throw ContractError("perplexity: no scored tokens");
  return std::exp(nll / static_cast<double>(tokens));
}

nlohmann::json eval_result_to_json(const EvalResult& result, bool include_per_item);

}  // namespace mofe
