// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/vocab.hpp"

#include <cctype>

namespace pmi {

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : sentence) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<unk>", "<bos>", "<eos>"}) add(t);
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
  for (const auto& t : tokens) add(t);
}

Index Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  Index id = size();
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

Index Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(Index id) const {
  if (id < 0 || id >= size()) return tokens_[static_cast<std::size_t>(kUnkId)];
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<Index> Vocabulary::encode(std::string_view sentence) const {
  std::vector<Index> ids;
  for (const auto& t : tokenize(sentence)) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(std::span<const Index> ids) const {
  std::string out;
  for (Index i : ids) {
    if (i == kEosId) break;
    if (i == kPadId || i == kBosId) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(i);
  }
  return out;
}

Embedding embedding_from_table(ParameterSet& ps, const std::string& name, const Vocabulary& vocab,
                               const EmbeddingTable& table, Rng& rng, bool trainable) {
  Index dim = table.vectors.cols();
  if (dim < 1) throw ContractError("embedding table is empty");
  Vector v = normal_fill(rng, vocab.size() * dim, 0.1);
  v.head(dim).setZero();
  for (std::size_t r = 0; r < table.tokens.size(); ++r) {
    if (!vocab.contains(table.tokens[r])) continue;
    Index id = vocab.id(table.tokens[r]);
    if (id < kNumReservedIds) continue;
    for (Index c = 0; c < dim; ++c) v[id * dim + c] = table.vectors(static_cast<Index>(r), c);
  }
  Embedding e;
  e.table = ps.add(name + ".table", Tensor({vocab.size(), dim}, std::move(v)), trainable);
  return e;
}

}  // namespace pmi
