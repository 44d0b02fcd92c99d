// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pmi/nn.hpp"

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pmi {

// Lowercased runs of letters, digits and apostrophes.
std::vector<std::string> tokenize(std::string_view sentence);

// Ids 0..3 are PAD, UNK, BOS, EOS; corpus tokens follow in insertion order.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);

  Index add(const std::string& token);
  Index id(std::string_view token) const;  // UNK when absent
  const std::string& token(Index id) const;
  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }
  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<Index> encode(std::string_view sentence) const;
  // Stops at EOS and skips PAD and BOS.
  std::string decode(std::span<const Index> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Index> index_;
};

// Copies pretrained rows into an embedding for `vocab`; tokens missing from
// the table keep their random initialization and PAD stays zero.
Embedding embedding_from_table(ParameterSet& ps, const std::string& name, const Vocabulary& vocab,
                               const EmbeddingTable& table, Rng& rng, bool trainable);

}  // namespace pmi
