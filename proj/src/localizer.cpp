// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/localizer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace pmi {

Vocabulary localization_vocabulary(const LocDataset& data) {
  Vocabulary vocab(data.embeddings.tokens);
  for (const auto& v : data.videos)
    for (const auto& t : tokenize(v.annotation.sentence)) vocab.add(t);
  return vocab;
}

std::vector<LocSample> prepare_samples(const LocDataset& data, const Vocabulary& vocab, Index positions) {
  std::vector<LocSample> out;
  out.reserve(data.videos.size());
  for (const auto& v : data.videos) {
    LocSample s;
    for (Index m = 0; m < v.raw.size(); ++m)
      s.video.modalities.emplace_back(v.raw.modalities[static_cast<std::size_t>(m)].first,
                                      Tensor::from_matrix(subsample(v.raw.features(m).matrix(), positions)));
    s.tokens = vocab.encode(v.annotation.sentence);
    if (s.tokens.empty()) throw ContractError("empty sentence for video " + v.id);
    s.b_hat = {v.annotation.segment.start / v.annotation.duration, v.annotation.segment.end / v.annotation.duration};
    s.r_hat = relevance_mask(v.annotation.segment, v.annotation.duration, positions);
    s.annotation = v.annotation;
    out.push_back(std::move(s));
  }
  return out;
}

std::array<double, 2> mean_boundaries(std::span<const LocSample> samples) {
  if (samples.empty()) throw ContractError("no samples to average");
  std::array<double, 2> m{0.0, 0.0};
  for (const auto& s : samples) {
    m[0] += s.b_hat[0] / static_cast<double>(samples.size());
    m[1] += s.b_hat[1] / static_cast<double>(samples.size());
  }
  return m;
}

Localizer::Localizer(const LocConfig& cfg, std::vector<ModalityTag> tags, std::vector<Index> dims,
                     const Vocabulary& vocab, const EmbeddingTable& embeddings, std::uint64_t seed)
    : cfg_(cfg) {
  Rng rng(seed);
  Index d = cfg.dims.d;
  words_ = embedding_from_table(params_, "words", vocab, embeddings, rng, !cfg.freeze_embeddings);
  text_project_ = Linear::create(params_, "text.project", words_.dim(), d, rng);
  text_self_ = CGMIParams::create(params_, "text.self", cfg.dims, rng);
  PmiConfig pc;
  pc.dims = cfg.dims;
  pc.fusion = cfg.fusion;
  if (cfg.per_position_fusion) pc.fusion_positions = cfg.positions;
  encoder_ = PmiEncoder::create(params_, "pmi", std::move(tags), std::move(dims), pc, rng);
  vtli_ = VtliParams::create(params_, "vtli", cfg.dims, rng);
  auto plan = default_channel_plan(d, cfg.head_layers);
  head_ = HeadParams::create(params_, "head", d, plan, cfg.kernel, cfg.positions, rng);
}

Tensor Localizer::encode_text(std::span<const Index> tokens) const {
  return text_self_interact(embed(tokens, words_), text_project_, text_self_);
}

LocalizationOutput Localizer::forward(const LocSample& s, InteractionTrace* trace) const {
  Tensor x = pmi_encode(s.video, encoder_, cfg_.effective_mode(), trace);
  Tensor y = encode_text(s.tokens);
  Tensor z = cfg_.use_vtli ? vtli(x, y, cfg_.window, vtli_) : x;
  return loc_head(z, y, head_);
}

LocLoss Localizer::loss(const LocSample& s) const {
  LocalizationOutput out = forward(s);
  LocLoss l;
  l.pred = pred_loss(out.b, out.r, s.b_hat, s.r_hat, cfg_.lambda_r, cfg_.huber_delta);
  if (cfg_.use_norm && out.layers.size() > 1) {
    l.norm = norm_loss(std::span<const Tensor>(out.layers.data(), out.layers.size() - 1), cfg_.beta);
    l.total = total_loss(l.pred, l.norm, cfg_.lambda_n);
  } else {
    l.norm = Tensor::scalar(0.0);
    l.total = l.pred;
  }
  return l;
}

LocPrediction Localizer::predict(const LocSample& s) const {
  NoGradGuard guard;
  LocalizationOutput out = forward(s);
  LocPrediction p;
  p.video_id = s.annotation.video_id;
  p.segment = decode_segment(out.b[0], out.b[1], s.annotation.duration);
  p.relevance.assign(out.r.values().data(), out.r.values().data() + out.r.size());
  return p;
}

void Localizer::set_boundary_prior(std::array<double, 2> fractions) {
  Index n = cfg_.positions;
  Eigen::RowVectorXd through = head_.boundary.weight.matrix().colwise().sum() / static_cast<double>(n);
  Vector& bias = head_.boundary.bias.mutable_values();
  for (Index k = 0; k < 2; ++k) bias[k] = fractions[static_cast<std::size_t>(k)] - through[k];
}

std::vector<StepLog> train_localizer(Localizer& model, std::span<const LocSample> train, const TrainOptions& opt,
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
      LocLoss l = model.loss(train[next_index()]);
      if (!std::isfinite(l.total.item()))
        throw NonFiniteError("non-finite localization loss at step " + std::to_string(log.step));
      log.loss += l.total.item() * scale_by;
      log.pred += l.pred.item() * scale_by;
      log.norm += l.norm.item() * scale_by;
      backward(scale(l.total, scale_by));
    }
    log.grad_norm = adam.step(model.params());
    if (!std::isfinite(log.grad_norm))
      throw NonFiniteError("non-finite gradient norm at step " + std::to_string(log.step));
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opt.on_step) opt.on_step(log);
    logs.push_back(log);
  }
  return logs;
}

LocEval evaluate_localizer(const Localizer& model, std::span<const LocSample> samples) {
  LocEval e;
  std::vector<Segment> preds, truths;
  for (const auto& s : samples) {
    e.predictions.push_back(model.predict(s));
    preds.push_back(e.predictions.back().segment);
    truths.push_back(s.annotation.segment);
  }
  e.recall = recall_triple(preds, truths);
  return e;
}

}  // namespace pmi
