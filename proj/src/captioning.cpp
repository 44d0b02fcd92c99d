// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/captioning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace pmi {

// ---------------------------------------------------------------- decoder

AttentionParams AttentionParams::create(ParameterSet& ps, const std::string& name, Index hidden, Index d, Index a,
                                        Rng& rng) {
  AttentionParams p;
  p.state = Linear::create(ps, name + ".state", hidden, a, rng, false);
  p.video = Linear::create(ps, name + ".video", d, a, rng);
  p.v = ps.add(name + ".v", Tensor::parameter({a, 1}, xavier_uniform(rng, a, 1)));
  return p;
}

Attended temporal_attention(const Tensor& h, const Tensor& video, const AttentionParams& p, const Tensor* keys) {
  if (video.rank() != 2 || video.dim(0) < 1) throw ShapeError("temporal attention needs a non-empty N x d sequence");
  Tensor k = keys ? *keys : linear(video, p.video);
  Tensor scores = matmul(tanh(add(k, linear(reshape(h, {1, h.size()}), p.state))), p.v);
  Index n = video.dim(0);
  Attended out;
  out.weights = softmax(reshape(scores, {n}), 0);
  out.context = matmul(reshape(out.weights, {1, n}), video);
  return out;
}

DecoderParams DecoderParams::create(ParameterSet& ps, const std::string& name, Index vocab, Index embed_dim, Index d,
                                    Index hidden, Index attention_dim, Rng& rng) {
  DecoderParams p;
  p.words = make_embedding(ps, name + ".words", vocab, embed_dim, rng);
  p.attention = AttentionParams::create(ps, name + ".attention", hidden, d, attention_dim, rng);
  p.layer1 = RecurrentParams::create(ps, name + ".layer1", embed_dim + d, hidden, rng);
  p.layer2 = RecurrentParams::create(ps, name + ".layer2", hidden, hidden, rng);
  p.out = Linear::create(ps, name + ".out", hidden, vocab, rng);
  return p;
}

DecoderState initial_state(const DecoderParams& p) {
  DecoderState s;
  s.layer1 = zero_state(1, p.hidden());
  s.layer2 = zero_state(1, p.hidden());
  return s;
}

StepOutput decode_step(const DecoderState& state, const Tensor& video, const DecoderParams& p, const Tensor* keys) {
  Attended att = temporal_attention(state.layer2.h, video, p.attention, keys);
  Index prev = state.prev;
  Tensor input = concat({embed(std::span<const Index>(&prev, 1), p.words), att.context}, 1);
  StepOutput out;
  out.state.layer1 = recurrent_step(input, state.layer1, p.layer1);
  out.state.layer2 = recurrent_step(out.state.layer1.h, state.layer2, p.layer2);
  out.state.step = state.step + 1;
  out.logits = reshape(linear(out.state.layer2.h, p.out), {p.vocab_size()});
  out.weights = att.weights;
  return out;
}

Tensor train_caption_loss(const Tensor& video, std::span<const Index> reference, const DecoderParams& p) {
  if (reference.empty()) throw ContractError("empty reference caption");
  if (reference.back() != kEosId) throw ContractError("reference caption must end with EOS");
  Tensor keys = linear(video, p.attention.video);
  DecoderState state = initial_state(p);
  std::vector<Tensor> rows;
  Index vocab = p.vocab_size();
  Index t_len = static_cast<Index>(reference.size());
  Vector target = Vector::Zero(t_len * vocab);
  Index counted = 0;
  for (Index t = 0; t < t_len; ++t) {
    StepOutput o = decode_step(state, video, p, &keys);
    rows.push_back(reshape(o.logits, {1, vocab}));
    Index next = reference[static_cast<std::size_t>(t)];
    if (next != kPadId) {
      if (next < 0 || next >= vocab) throw ContractError("reference token outside the vocabulary");
      target[t * vocab + next] = 1.0;
      ++counted;
    }
    state = o.state;
    state.prev = next;
  }
  if (counted == 0) throw ContractError("reference caption has only padding");
  Tensor logp = log_softmax(concat(rows, 0), 1);
  return scale(sum_all(mul(logp, Tensor({t_len, vocab}, target))), -1.0 / static_cast<double>(counted));
}

namespace {

struct Hypothesis {
  std::vector<Index> tokens;
  double logp = 0.0;
  DecoderState state;
};

}  // namespace

std::vector<Index> generate(const Tensor& video, const DecoderParams& p, Index beam, Index max_len) {
  if (beam < 1) throw ContractError("beam width must be at least 1");
  if (max_len < 1) throw ContractError("max_len must be at least 1");
  NoGradGuard guard;
  Tensor keys = linear(video, p.attention.video);
  std::vector<Hypothesis> live{{{}, 0.0, initial_state(p)}};
  std::vector<std::pair<double, std::vector<Index>>> finished;  // normalized score, tokens with EOS

  struct Candidate {
    double logp;
    Index token;
    std::size_t parent;
  };
  for (Index step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Candidate> pool;
    std::vector<StepOutput> outs;
    for (std::size_t h = 0; h < live.size(); ++h) {
      outs.push_back(decode_step(live[h].state, video, p, &keys));
      Vector lp = log_softmax(outs.back().logits, 0).values();
      // Only PAD and BOS are never emitted.
      for (Index v = 0; v < lp.size(); ++v)
        if (v != kPadId && v != kBosId) pool.push_back({live[h].logp + lp[v], v, h});
    }
    auto by_score = [](const Candidate& a, const Candidate& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    };
    std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(beam), pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(), by_score);
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = pool[i];
      Hypothesis h{live[c.parent].tokens, c.logp, outs[c.parent].state};
      h.tokens.push_back(c.token);
      h.state.prev = c.token;
      if (c.token == kEosId)
        finished.emplace_back(h.logp / static_cast<double>(h.tokens.size()), std::move(h.tokens));
      else
        next.push_back(std::move(h));
    }
    live = std::move(next);
    if (static_cast<Index>(finished.size()) >= beam) break;
  }
  for (auto& h : live) finished.emplace_back(h.logp / static_cast<double>(h.tokens.size()), std::move(h.tokens));
  if (finished.empty()) return {};
  auto best = std::max_element(finished.begin(), finished.end(),
                               [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Index> out = best->second;
  if (!out.empty() && out.back() == kEosId) out.pop_back();
  return out;
}

// ---------------------------------------------------------------- metrics

namespace {

using NGram = std::vector<std::string>;
using Counts = std::map<NGram, double>;

Counts ngram_counts(const TokenList& tokens, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) c[NGram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                                               tokens.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1.0;
  return c;
}

void check_aligned(std::size_t c, std::size_t r) {
  if (c != r) throw ContractError("one reference set per candidate is required");
}

}  // namespace

std::array<double, 4> bleu(std::span<const TokenList> candidates, std::span<const std::vector<TokenList>> references) {
  check_aligned(candidates.size(), references.size());
  std::array<double, 4> matched{}, total{};
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TokenList& cand = candidates[i];
    const auto& refs = references[i];
    if (refs.empty()) throw ContractError("candidate without references");
    cand_len += static_cast<double>(cand.size());
    // Closest reference length; ties go to the shorter one.
    std::size_t best = refs[0].size();
    for (const auto& r : refs) {
      auto dist = [&](std::size_t len) { return len > cand.size() ? len - cand.size() : cand.size() - len; };
      if (dist(r.size()) < dist(best) || (dist(r.size()) == dist(best) && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (std::size_t n = 1; n <= 4; ++n) {
      Counts cc = ngram_counts(cand, n);
      Counts max_ref;
      for (const auto& r : refs)
        for (const auto& [g, k] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
      for (const auto& [g, k] : cc) {
        auto it = max_ref.find(g);
        matched[n - 1] += std::min(k, it == max_ref.end() ? 0.0 : it->second);
        total[n - 1] += k;
      }
    }
  }
  std::array<double, 4> out{};
  double bp = cand_len == 0.0 ? 0.0 : (cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len));
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (matched[n] == 0.0 || total[n] == 0.0) {
      for (std::size_t k = n; k < 4; ++k) out[k] = 0.0;
      break;
    }
    log_sum += std::log(matched[n] / total[n]);
    out[n] = 100.0 * bp * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return out;
}

double cider(std::span<const TokenList> candidates, std::span<const std::vector<TokenList>> references) {
  check_aligned(candidates.size(), references.size());
  if (candidates.empty()) return 0.0;
  double corpus = static_cast<double>(references.size());
  double score = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<NGram, double> df;
    for (const auto& refs : references) {
      std::set<NGram> seen;
      for (const auto& r : refs)
        for (const auto& [g, k] : ngram_counts(r, n)) seen.insert(g);
      for (const auto& g : seen) df[g] += 1.0;
    }
    auto tfidf = [&](const TokenList& s) {
      Counts c = ngram_counts(s, n);
      double len = 0.0;
      for (const auto& [g, k] : c) len += k;
      for (auto& [g, k] : c) {
        auto it = df.find(g);
        k = (k / len) * std::log(corpus / std::max(1.0, it == df.end() ? 0.0 : it->second));
      }
      return c;
    };
    auto cosine = [](const Counts& a, const Counts& b) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (const auto& [g, v] : a) {
        na += v * v;
        auto it = b.find(g);
        if (it != b.end()) dot += v * it->second;
      }
      for (const auto& [g, v] : b) nb += v * v;
      return na == 0.0 || nb == 0.0 ? 0.0 : dot / std::sqrt(na * nb);
    };
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      Counts c = tfidf(candidates[i]);
      double sim = 0.0;
      for (const auto& r : references[i]) sim += cosine(c, tfidf(r));
      score += sim / static_cast<double>(references[i].size()) / 4.0;
    }
  }
  return 10.0 * score / static_cast<double>(candidates.size());
}

// ---------------------------------------------------------------- model

Vocabulary caption_vocabulary(const CaptionDataset& data) {
  Vocabulary vocab;
  for (const auto& v : data.videos)
    for (const auto& t : tokenize(v.reference)) vocab.add(t);
  return vocab;
}

std::vector<CapSample> prepare_caption_samples(const CaptionDataset& data, const Vocabulary& vocab, Index positions) {
  std::vector<CapSample> out;
  for (const auto& v : data.videos) {
    CapSample s;
    s.id = v.id;
    for (Index m = 0; m < v.raw.size(); ++m)
      s.video.modalities.emplace_back(v.raw.modalities[static_cast<std::size_t>(m)].first,
                                      Tensor::from_matrix(subsample(v.raw.features(m).matrix(), positions)));
    s.tokens = vocab.encode(v.reference);
    if (s.tokens.empty()) throw ContractError("empty caption for video " + v.id);
    s.tokens.push_back(kEosId);
    s.reference = v.reference;
    out.push_back(std::move(s));
  }
  return out;
}

Captioner::Captioner(const CaptionConfig& cfg, std::vector<ModalityTag> tags, std::vector<Index> dims, Index vocab_size,
                     std::uint64_t seed)
    : cfg_(cfg) {
  Index d = cfg.dims.d;
  if (d % 2 != 0) throw ContractError("the bidirectional encoder splits d in halves; d must be even");
  Rng rng(seed);
  PmiConfig pc;
  pc.dims = cfg.dims;
  pc.fusion = cfg.fusion;
  encoder_ = PmiEncoder::create(params_, "pmi", std::move(tags), std::move(dims), pc, rng);
  forward_ = RecurrentParams::create(params_, "encoder.forward", d, d / 2, rng);
  backward_ = RecurrentParams::create(params_, "encoder.backward", d, d / 2, rng);
  decoder_ = DecoderParams::create(params_, "decoder", vocab_size, cfg.embed_dim, d, cfg.hidden, cfg.attention_dim, rng);
}

Tensor Captioner::encode(const ModalityBundle& video, InteractionTrace* trace) const {
  Tensor fused = pmi_encode(video, encoder_, cfg_.mode, trace);
  return cfg_.attend_fused ? fused : bidirectional_encode(fused, forward_, backward_);
}

Tensor Captioner::loss(const CapSample& s) const { return train_caption_loss(encode(s.video), s.tokens, decoder_); }

std::vector<Index> Captioner::caption(const CapSample& s, Index beam) const {
  NoGradGuard guard;
  return generate(encode(s.video), decoder_, beam, cfg_.max_len);
}

std::vector<StepLog> train_captioner(Captioner& model, std::span<const CapSample> train, const TrainOptions& opt,
                                     Adam* optimizer) {
  if (train.empty()) throw ContractError("no training samples");
  if (opt.batch < 1 || opt.steps < 0) throw ContractError("batch must be positive and steps non-negative");
  Adam local(opt.adam);
  Adam& adam = optimizer ? *optimizer : local;
  Rng rng(opt.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
      cursor = 0;
    }
    return order[cursor++];
  };
  // A resumed optimizer continues the sample stream where it stopped.
  for (long i = 0; i < adam.steps() * static_cast<long>(opt.batch); ++i) next_index();

  std::vector<StepLog> logs;
  auto t0 = std::chrono::steady_clock::now();
  double scale_by = 1.0 / static_cast<double>(opt.batch);
  for (Index step = 1; step <= opt.steps; ++step) {
    StepLog log;
    log.step = adam.steps() + 1;
    model.params().zero_grad();
    for (Index b = 0; b < opt.batch; ++b) {
      Tensor l = model.loss(train[next_index()]);
      if (!std::isfinite(l.item())) throw NonFiniteError("non-finite caption loss at step " + std::to_string(log.step));
      log.loss += l.item() * scale_by;
      backward(scale(l, scale_by));
    }
    log.pred = log.loss;
    log.grad_norm = adam.step(model.params());
    if (!std::isfinite(log.grad_norm))
      throw NonFiniteError("non-finite gradient norm at step " + std::to_string(log.step));
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opt.on_step) opt.on_step(log);
    logs.push_back(log);
  }
  return logs;
}

CapEval evaluate_captioner(const Captioner& model, std::span<const CapSample> samples, const Vocabulary& vocab,
                           Index beam) {
  CapEval e;
  std::vector<TokenList> cands;
  std::vector<std::vector<TokenList>> refs;
  for (const auto& s : samples) {
    std::string text = vocab.decode(model.caption(s, beam));
    e.captions.emplace_back(s.id, text);
    cands.push_back(tokenize(text));
    refs.push_back({tokenize(s.reference)});
  }
  e.bleu = bleu(cands, refs);
  e.cider = cider(cands, refs);
  return e;
}

void write_captions(const std::filesystem::path& path, std::span<const std::pair<std::string, std::string>> rows) {
  write_atomic(path, [&](std::ostream& out) {
    for (const auto& [id, text] : rows) {
      if (id.find('\t') != std::string::npos || text.find_first_of("\t\n") != std::string::npos)
        throw FormatError("caption fields may not contain tabs or newlines");
      out << id << '\t' << text << '\n';
    }
  });
}

std::vector<std::pair<std::string, std::string>> read_captions(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> rows;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto f = split(lines[i], '\t');
    if (f.size() != 2) throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": expected 2 fields");
    std::string text(f[1]);
    std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
    rows.emplace_back(std::string(f[0]), text);
  }
  return rows;
}

}  // namespace pmi
