// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/gradcheck_suite.hpp"

#include "pmi/captioning.hpp"
#include "pmi/localizer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace pmi {

namespace {

Tensor param(Rng& rng, Shape shape, double scale = 1.0) {
  Vector v(shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-scale, scale);
  return Tensor(std::move(shape), std::move(v), true);
}

// Fixed random weights make a generic scalar objective out of any tensor.
Tensor objective(const Tensor& t, std::uint64_t seed = 99) {
  Rng rng(seed);
  Vector w(t.size());
  for (Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1.0, 1.0);
  return sum_all(mul(t, Tensor(t.shape(), std::move(w))));
}

InteractionDims tiny_dims(Index d = 8, Index d_low = 4, Index heads = 2) {
  return {.d = d, .d_low = d_low, .d_c = 2, .heads = heads, .k_max = 3};
}

NamedTensors with_inputs(const ParameterSet& ps, std::initializer_list<std::pair<const char*, Tensor>> inputs) {
  NamedTensors out = ps.named();
  for (const auto& [name, t] : inputs) out.emplace_back(name, t);
  return out;
}

GradCheckReport elementwise_ops() {
  Rng rng(1);
  Tensor a = param(rng, {3, 4});
  Tensor b = param(rng, {3, 4});
  Tensor pos = param(rng, {3, 4});
  pos.mutable_values().array() = pos.values().array().abs() + 0.5;
  return finite_diff_check(
      [&] {
        Tensor t = add(mul(sigmoid(a), tanh(b)), div(a, pos));
        t = add(t, add(sub(relu(a), leaky_relu(b, 0.1)), huber(b, 0.3)));
        t = add(t, add(log(pos), sqrt(pos)));
        t = add(t, add(exp(scale(a, 0.5)), square(neg(b))));
        return objective(add_scalar(t, 1.0));
      },
      {{"a", a}, {"b", b}, {"pos", pos}});
}

GradCheckReport matmul_ops() {
  Rng rng(2);
  Tensor a = param(rng, {3, 4});
  Tensor b = param(rng, {4, 2});
  Tensor c = param(rng, {3, 2});
  return finite_diff_check([&] { return objective(add(matmul(a, b), transpose(matmul(transpose(b), transpose(a)))) * c); },
                           {{"a", a}, {"b", b}, {"c", c}});
}

GradCheckReport softmax_ops() {
  Rng rng(3);
  Tensor a = param(rng, {3, 5}, 2.0);
  return finite_diff_check(
      [&] { return add(objective(softmax(a, 0)), add(objective(softmax(a, 1), 5), objective(log_softmax(a, 1), 6))); },
      {{"a", a}});
}

GradCheckReport shape_ops() {
  Rng rng(4);
  Tensor a = param(rng, {3, 4});
  Tensor b = param(rng, {2, 4});
  std::vector<Index> rows{2, 0, 2, 4};
  std::vector<Index> buckets{0, 1, 1, 2, 2, 2, 0, 1, 0, 0, 1, 2, 1, 1, 0, 0, 2, 2, 2, 1};
  std::vector<Index> extents{1, 3};
  return finite_diff_check(
      [&] {
        Tensor cat = concat({a, b}, 0);  // 5 x 4
        Tensor t = add(objective(reshape(slice(cat, 1, 1, 2), {2, 5})), objective(index_select(cat, rows), 7));
        t = add(t, objective(bucket_sum(reshape(cat, {4, 5}), buckets, 3), 8));
        auto parts = split(cat, 1, extents);
        t = add(t, objective(parts[1], 9));
        t = add(t, add(objective(sum(cat, 0), 10), objective(mean(cat, 1), 11)));
        return add(t, mean_all(square(cat)));
      },
      {{"a", a}, {"b", b}});
}

GradCheckReport linear_ffn() {
  Rng rng(5);
  ParameterSet ps;
  Linear l = Linear::create(ps, "linear", 4, 3, rng);
  FFN f = FFN::create(ps, "ffn", 3, 4, rng);
  Tensor x = param(rng, {5, 4});
  return finite_diff_check([&] { return objective(ffn(linear(x, l), f)); }, with_inputs(ps, {{"x", x}}));
}

GradCheckReport recurrent() {
  Rng rng(6);
  ParameterSet ps;
  RecurrentParams fwd = RecurrentParams::create(ps, "forward", 3, 2, rng);
  RecurrentParams bwd = RecurrentParams::create(ps, "backward", 3, 2, rng);
  Tensor x = param(rng, {4, 3});
  return finite_diff_check([&] { return objective(bidirectional_encode(x, fwd, bwd)); }, with_inputs(ps, {{"x", x}}));
}

GradCheckReport normalization() {
  Rng rng(7);
  Tensor x = param(rng, {6, 3}, 2.0);
  Tensor gain = param(rng, {1, 3});
  Tensor bias = param(rng, {1, 3});
  return finite_diff_check([&] { return objective(instance_norm(x, gain, bias)); },
                           {{"x", x}, {"gain", gain}, {"bias", bias}});
}

GradCheckReport embedding_lookup() {
  Rng rng(8);
  ParameterSet ps;
  Embedding e = make_embedding(ps, "words", 6, 3, rng);
  std::vector<Index> ids{4, 0, 2, 4, 9};
  return finite_diff_check([&] { return objective(embed(ids, e)); }, ps.named());
}

GradCheckReport bilinear_attention() {
  Rng rng(9);
  ParameterSet ps;
  BilinearParams p = BilinearParams::create(ps, "attention", tiny_dims(), rng);
  Tensor xp = param(rng, {4, 8});
  Tensor xq = param(rng, {3, 8});
  return finite_diff_check([&] { return objective(sequence_interaction(xp, xq, p)); },
                           with_inputs(ps, {{"xp", xp}, {"xq", xq}}));
}

GradCheckReport gate() {
  Rng rng(10);
  ParameterSet ps;
  GateParams p = GateParams::create(ps, "gate", tiny_dims(), rng);
  Tensor xp = param(rng, {4, 8});
  Tensor xq = param(rng, {3, 8});
  return finite_diff_check([&] { return objective(channel_gate(xp, xq, p)); }, with_inputs(ps, {{"xp", xp}, {"xq", xq}}));
}

GradCheckReport cgmi_block() {
  Rng rng(11);
  ParameterSet ps;
  CGMIParams p = CGMIParams::create(ps, "cgmi", tiny_dims(), rng);
  Tensor xp = param(rng, {4, 8});
  Tensor xq = param(rng, {4, 8});
  return finite_diff_check([&] { return objective(cgmi(xp, xq, p)); }, with_inputs(ps, {{"xp", xp}, {"xq", xq}}));
}

GradCheckReport fusion() {
  Rng rng(12);
  ParameterSet ps;
  FusionParams p = FusionParams::create(ps, "fusion", 8, 4, rng);
  Tensor x = param(rng, {5, 4, 8});
  return finite_diff_check([&] { return objective(fuse(x, p).value); }, with_inputs(ps, {{"x_mi", x}}));
}

ModalityBundle tiny_bundle(Rng& rng, Index n, std::vector<Index> dims) {
  std::vector<ModalityTag> tags{ModalityTag::visual, ModalityTag::motion, ModalityTag::audio};
  ModalityBundle b;
  for (std::size_t m = 0; m < dims.size(); ++m) b.modalities.emplace_back(tags[m], param(rng, {n, dims[m]}));
  return b;
}

GradCheckReport pmi_encoder() {
  Rng rng(13);
  ParameterSet ps;
  PmiConfig cfg;
  cfg.dims = tiny_dims();
  ModalityBundle b = tiny_bundle(rng, 4, {5, 3, 4});
  PmiEncoder enc = PmiEncoder::create(ps, "pmi", {ModalityTag::visual, ModalityTag::motion, ModalityTag::audio},
                                      {5, 3, 4}, cfg, rng);
  return finite_diff_check([&] { return objective(pmi_encode(b, enc, PmiMode::full)); }, ps.named());
}

GradCheckReport text_interaction() {
  Rng rng(14);
  ParameterSet ps;
  Linear project = Linear::create(ps, "project", 5, 8, rng);
  CGMIParams p = CGMIParams::create(ps, "self", tiny_dims(), rng);
  Tensor y = param(rng, {3, 5});
  return finite_diff_check([&] { return objective(text_self_interact(y, project, p)); }, with_inputs(ps, {{"y", y}}));
}

GradCheckReport mm() {
  Rng rng(15);
  ParameterSet ps;
  MMParams p = MMParams::create(ps, "mm", 4, rng, true);
  Tensor a = param(rng, {3, 4});
  Tensor b = param(rng, {3, 4});
  return finite_diff_check([&] { return objective(mm_unit(a, b, p)); }, with_inputs(ps, {{"a", a}, {"b", b}}));
}

GradCheckReport local_interaction() {
  Rng rng(16);
  ParameterSet ps;
  VtliParams p = VtliParams::create(ps, "vtli", tiny_dims(), rng);
  Tensor x = param(rng, {5, 8});
  Tensor y = param(rng, {3, 8});
  return finite_diff_check([&] { return objective(vtli(x, y, 1, p)); }, with_inputs(ps, {{"x", x}, {"y", y}}));
}

GradCheckReport temporal_conv() {
  Rng rng(17);
  ParameterSet ps;
  Conv1d c = Conv1d::create(ps, "conv", 3, 2, 3, rng);
  Tensor x = param(rng, {6, 3});
  return finite_diff_check([&] { return objective(conv1d(x, c)); }, with_inputs(ps, {{"x", x}}));
}

GradCheckReport relevance_head() {
  Rng rng(18);
  ParameterSet ps;
  std::vector<Index> plan{4, 2, 1};
  HeadParams h = HeadParams::create(ps, "head", 8, plan, 3, 8, rng);
  Tensor z = param(rng, {8, 8});
  Tensor y = param(rng, {3, 8});
  return finite_diff_check(
      [&] {
        LocalizationOutput out = loc_head(z, y, h);
        return add(objective(out.b), objective(out.r, 7));
      },
      with_inputs(ps, {{"z", z}, {"y", y}}));
}

GradCheckReport localization_losses() {
  Rng rng(19);
  Tensor a = param(rng, {6, 3}, 2.0);
  Tensor b = param(rng, {2});
  Tensor logits = param(rng, {6});
  std::vector<double> b_hat{0.2, 0.55};
  std::vector<double> r_hat{0, 1, 1, 1, 0, 0};
  return finite_diff_check(
      [&] {
        Tensor r = softmax(logits, 0);
        return total_loss(pred_loss(b, r, b_hat, r_hat, 5.0, 1.0), norm_loss(std::vector<Tensor>{a}, 1.0), 0.001);
      },
      {{"a", a}, {"b", b}, {"logits", logits}});
}

GradCheckReport attention_over_time() {
  Rng rng(20);
  ParameterSet ps;
  AttentionParams p = AttentionParams::create(ps, "attention", 3, 4, 5, rng);
  Tensor h = param(rng, {1, 3});
  Tensor v = param(rng, {5, 4});
  return finite_diff_check(
      [&] {
        Attended a = temporal_attention(h, v, p);
        return add(objective(a.context), objective(a.weights, 5));
      },
      with_inputs(ps, {{"h", h}, {"video", v}}));
}

GradCheckReport caption_decoder() {
  Rng rng(21);
  ParameterSet ps;
  DecoderParams p = DecoderParams::create(ps, "decoder", 9, 4, 4, 5, 3, rng);
  Tensor v = param(rng, {4, 4});
  std::vector<Index> ref{5, 7, 6, kEosId};
  return finite_diff_check([&] { return train_caption_loss(v, ref, p); }, with_inputs(ps, {{"video", v}}));
}

GradCheckReport localizer_model() {
  SynthSpec spec;
  spec.num_videos = 2;
  spec.raw_length = 16;
  spec.seg_min = 0.15;
  spec.seg_max = 0.3;
  spec.dims = {4, 4};
  spec.signal_channels = 2;
  spec.embed_dim = 4;
  LocDataset data = gen_localization_set(spec);
  Vocabulary vocab = localization_vocabulary(data);
  LocConfig cfg;
  cfg.dims = tiny_dims();
  cfg.positions = 8;
  cfg.window = 1;
  cfg.freeze_embeddings = false;
  auto samples = prepare_samples(data, vocab, cfg.positions);
  Localizer model(cfg, data.tags, data.dims, vocab, data.embeddings, 5);
  return finite_diff_check([&] { return model.loss(samples[0]).total; }, model.params().named());
}

GradCheckReport captioner_model() {
  CaptionSpec spec;
  spec.num_videos = 2;
  spec.raw_length = 16;
  CaptionDataset data = gen_caption_set(spec);
  Vocabulary vocab = caption_vocabulary(data);
  CaptionConfig cfg;
  cfg.dims = tiny_dims();
  cfg.positions = 4;
  cfg.embed_dim = 4;
  cfg.hidden = 4;
  cfg.attention_dim = 4;
  auto samples = prepare_caption_samples(data, vocab, cfg.positions);
  CapSample s = samples[0];
  s.tokens = {s.tokens[0], s.tokens[1], kEosId};
  Captioner model(cfg, data.tags, data.dims, vocab.size(), 5);
  return finite_diff_check([&] { return model.loss(s); }, model.params().named());
}

}  // namespace

std::vector<GradCheckComponent> gradcheck_components() {
  return {
      {"elementwise", elementwise_ops},
      {"matmul", matmul_ops},
      {"softmax", softmax_ops},
      {"shape_ops", shape_ops},
      {"linear_ffn", linear_ffn},
      {"bidirectional_recurrent", recurrent},
      {"instance_norm", normalization},
      {"embedding", embedding_lookup},
      {"bilinear_attention", bilinear_attention},
      {"channel_gate", gate},
      {"cgmi", cgmi_block},
      {"fusion", fusion},
      {"pmi_encoder", pmi_encoder},
      {"text_self_interaction", text_interaction},
      {"mm_unit", mm},
      {"vtli", local_interaction},
      {"conv1d", temporal_conv},
      {"relevance_head", relevance_head},
      {"localization_losses", localization_losses},
      {"temporal_attention", attention_over_time},
      {"caption_decoder", caption_decoder},
      {"localizer_model", localizer_model},
      {"captioner_model", captioner_model},
  };
}

std::vector<ComponentResult> run_gradcheck_suite(const std::vector<GradCheckComponent>& components, double tolerance,
                                                 std::ostream* out) {
  std::vector<ComponentResult> results;
  for (const auto& c : components) {
    ComponentResult r;
    r.name = c.name;
    auto t0 = std::chrono::steady_clock::now();
    try {
      r.report = c.run();
      if (!std::isfinite(r.report.max_rel_error)) r.failure = "non-finite relative error";
    } catch (const NonFiniteError& e) {
      r.failure = e.what();
    }
    Graph::current().clear();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (out) {
      char line[256];
      std::snprintf(line, sizeof line, "%-24s max_rel_error %.3e  checked %6ld  vanishing %5ld  kinks %3ld  %6.2fs  %s",
                    r.name.c_str(), r.report.max_rel_error, static_cast<long>(r.report.checked),
                    static_cast<long>(r.report.vanishing), static_cast<long>(r.report.skipped), r.seconds,
                    r.passed(tolerance) ? "ok" : "FAIL");
      *out << line;
      if (!r.failure.empty()) *out << "  (" << r.failure << ")";
      *out << '\n' << std::flush;
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace pmi
