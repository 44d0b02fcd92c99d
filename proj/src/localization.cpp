// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/localization.hpp"

#include "pmi/io.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace pmi {

// ---------------------------------------------------------------- layers

Tensor text_self_interact(const Tensor& y, const Linear& project, const CGMIParams& p) {
  if (y.rank() != 2 || y.dim(0) == 0) throw ShapeError("empty sentence");
  Tensor projected = linear(y, project);
  return cgmi(projected, projected, p);
}

std::vector<Index> window_indices(Index n, Index w) {
  if (n < 1 || w < 0) throw ContractError("window needs N >= 1 and w >= 0");
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(n * (2 * w + 1)));
  for (Index t = 0; t < n; ++t)
    for (Index k = -w; k <= w; ++k) idx.push_back(std::clamp<Index>(t + k, 0, n - 1));
  return idx;
}

Tensor local_window(const Tensor& x, Index t, Index w) {
  Index n = x.dim(0);
  if (t < 0 || t >= n) throw ContractError("window centre " + std::to_string(t) + " outside [0, " + std::to_string(n) + ")");
  std::vector<Index> idx;
  for (Index k = -w; k <= w; ++k) idx.push_back(std::clamp<Index>(t + k, 0, n - 1));
  return index_select(x, idx);
}

MMParams MMParams::create(ParameterSet& ps, const std::string& name, Index d, Rng& rng, bool with_bias) {
  return {Linear::create(ps, name, 4 * d, d, rng, with_bias)};
}

Tensor mm_unit(const Tensor& a, const Tensor& b, const MMParams& p) {
  if (a.shape() != b.shape())
    throw ShapeError("mm_unit operands differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return linear(concat({a, b, mul(a, b), add(a, b)}, -1), p.w);
}

VtliParams VtliParams::create(ParameterSet& ps, const std::string& name, const InteractionDims& dims, Rng& rng) {
  VtliParams v;
  v.video_to_text = BilinearParams::create(ps, name + ".v2t", dims, rng);
  v.text_to_video = BilinearParams::create(ps, name + ".t2v", dims, rng);
  v.mm_video = MMParams::create(ps, name + ".mm_v", dims.d, rng);
  v.mm_text = MMParams::create(ps, name + ".mm_t", dims.d, rng);
  return v;
}

Tensor vtli(const Tensor& x, const Tensor& y, Index w, const VtliParams& p) {
  if (x.rank() != 2 || x.dim(0) == 0) throw ShapeError("vtli needs a non-empty video sequence");
  if (y.rank() != 2 || y.dim(0) == 0) throw ShapeError("vtli needs a non-empty sentence");
  Index n = x.dim(0);
  Index d = x.dim(1);
  Index width = 2 * w + 1;
  std::vector<Index> idx = window_indices(n, w);
  Tensor pooled = mean(reshape(index_select(x, idx), {n, width, d}), 1);

  // Video to text: every pooled window is an independent one-row query, so
  // stacking them as rows is the same computation.
  Tensor z_video = mm_unit(sequence_interaction(pooled, y, p.video_to_text, false), pooled, p.mm_video);

  // Text to video: key scores are shared between overlapping windows, so they
  // are computed once per position and gathered.
  const BilinearParams& t2v = p.text_to_video;
  Tensor y_mean = reshape(mean(y, 0), {1, d});
  Tensor q_low = relu(linear(y_mean, t2v.u_p));
  Tensor k_low = relu(linear(x, t2v.u_q));
  Tensor values = linear(x, t2v.value);
  Index heads = t2v.heads();
  Index dv = d / heads;
  std::vector<Tensor> outputs;
  for (Index h = 0; h < heads; ++h) {
    Tensor logits = reshape(index_select(transpose(head_logits(q_low, k_low, t2v, h)), idx), {n, width});
    Tensor a = softmax(logits, 1);
    Tensor v = reshape(index_select(slice(values, 1, h * dv, dv), idx), {n, width, dv});
    outputs.push_back(sum(mul(v, reshape(a, {n, width, 1})), 1));
  }
  Tensor z_text = linear(heads == 1 ? outputs.front() : concat(outputs, 1), t2v.merge);
  std::vector<Index> zeros(static_cast<std::size_t>(n), 0);
  Tensor z_text_mm = mm_unit(z_text, index_select(y_mean, zeros), p.mm_text);
  return add(z_video, z_text_mm);
}

Conv1d Conv1d::create(ParameterSet& ps, const std::string& name, Index in, Index out, Index kernel, Rng& rng) {
  if (kernel < 1 || kernel % 2 == 0) throw ContractError("conv kernel width must be odd");
  Conv1d c;
  c.kernel = kernel;
  c.weight = ps.add(name + ".weight", Tensor({kernel * in, out}, xavier_uniform(rng, kernel * in, out)));
  c.bias = ps.add(name + ".bias", Tensor::zeros({1, out}));
  return c;
}

Tensor conv1d(const Tensor& x, const Conv1d& p) {
  if (x.rank() != 2 || x.dim(1) != p.in_dim())
    throw ShapeError("conv1d expects N x " + std::to_string(p.in_dim()) + ", got " + shape_str(x.shape()));
  Index n = x.dim(0);
  Index half = p.kernel / 2;
  std::vector<Tensor> taps;
  for (Index k = -half; k <= half; ++k) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index t = 0; t < n; ++t) idx[static_cast<std::size_t>(t)] = std::clamp<Index>(t + k, 0, n - 1);
    taps.push_back(index_select(x, idx));
  }
  Tensor cols = taps.size() == 1 ? taps.front() : concat(taps, 1);
  return add(matmul(cols, p.weight), p.bias);
}

std::vector<Index> default_channel_plan(Index d, Index layers) {
  if (layers < 1) throw ContractError("the head needs at least one layer");
  std::vector<Index> plan;
  Index c = d;
  for (Index k = 1; k < layers; ++k) {
    c = std::max<Index>(1, c / 2);
    plan.push_back(c);
  }
  plan.push_back(1);
  return plan;
}

HeadParams HeadParams::create(ParameterSet& ps, const std::string& name, Index d, std::span<const Index> channels,
                              Index kernel, Index positions, Rng& rng) {
  if (channels.empty() || channels.back() != 1)
    throw ContractError("the head channel plan must be non-empty and end in 1");
  for (Index c : channels)
    if (c < 1) throw ContractError("head channel widths must be positive");
  HeadParams h;
  Index in = d;
  for (std::size_t k = 0; k < channels.size(); ++k) {
    std::string layer = name + ".conv" + std::to_string(k + 1);
    h.convs.push_back(Conv1d::create(ps, layer, in + d, channels[k], kernel, rng));
    if (k + 1 < channels.size()) {
      h.norm_gain.push_back(ps.add(layer + ".norm_gain", Tensor::ones({1, channels[k]})));
      h.norm_bias.push_back(ps.add(layer + ".norm_bias", Tensor::zeros({1, channels[k]})));
    }
    in = channels[k];
  }
  h.boundary = Linear::create(ps, name + ".boundary", positions, 2, rng);
  return h;
}

LocalizationOutput loc_head(const Tensor& z, const Tensor& y, const HeadParams& p) {
  if (p.layers() < 1) throw ContractError("the head needs at least one layer");
  Index n = z.dim(0);
  Index d = z.dim(1);
  if (p.boundary.in_dim() != n)
    throw ShapeError("head built for " + std::to_string(p.boundary.in_dim()) + " positions, got " + std::to_string(n));
  std::vector<Index> zeros(static_cast<std::size_t>(n), 0);
  Tensor text = index_select(reshape(mean(y, 0), {1, d}), zeros);

  LocalizationOutput out;
  Tensor c = z;
  for (Index k = 0; k < p.layers(); ++k) {
    c = conv1d(concat({c, text}, 1), p.convs[static_cast<std::size_t>(k)]);
    if (k + 1 < p.layers())
      c = leaky_relu(instance_norm(c, p.norm_gain[static_cast<std::size_t>(k)], p.norm_bias[static_cast<std::size_t>(k)]));
    out.layers.push_back(c);
  }
  out.r = softmax(reshape(c, {n}), 0);
  out.b = reshape(linear(reshape(out.r, {1, n}), p.boundary), {2});
  return out;
}

// ---------------------------------------------------------------- losses

Tensor norm_loss(std::span<const Tensor> layers, double beta) {
  if (!(beta > 0)) throw DomainError("norm target beta must be positive");
  Tensor total = Tensor::scalar(0.0);
  for (const auto& c : layers) {
    Tensor norms = sqrt(sum(square(c), 1));
    total = add(total, sum_all(square(add_scalar(norms, -beta))));
  }
  return total;
}

Tensor pred_loss(const Tensor& b, const Tensor& r, std::span<const double> b_hat, std::span<const double> r_hat,
                 double lambda_r, double delta) {
  if (b.size() != 2 || b_hat.size() != 2) throw ShapeError("boundaries have two components");
  if (static_cast<Index>(r_hat.size()) != r.size())
    throw ShapeError("relevance mask has " + std::to_string(r_hat.size()) + " entries for " + std::to_string(r.size()) +
                     " positions");
  double mass = std::accumulate(r_hat.begin(), r_hat.end(), 0.0);
  if (!(mass >= 1.0)) throw ContractError("ground-truth relevance mask is empty");
  Tensor boundary = sum_all(huber(sub(reshape(b, {2}), Tensor::from({2}, {b_hat[0], b_hat[1]})), delta));
  // Only masked positions enter the log, so r may vanish elsewhere.
  std::vector<Index> rows;
  std::vector<double> weights;
  for (std::size_t i = 0; i < r_hat.size(); ++i)
    if (r_hat[i] != 0.0) {
      rows.push_back(static_cast<Index>(i));
      weights.push_back(r_hat[i]);
    }
  Tensor picked = index_select(reshape(r, {r.size(), 1}), rows);
  Tensor mask = Tensor::from({static_cast<Index>(rows.size()), 1}, weights);
  Tensor relevance = scale(sum_all(mul(mask, log(picked))), -lambda_r / mass);
  return add(boundary, relevance);
}

Tensor total_loss(const Tensor& pred, const Tensor& norm, double lambda_n) { return add(pred, scale(norm, lambda_n)); }

// ---------------------------------------------------------------- decoding and metrics

Segment decode_segment(double b0, double b1, double duration) {
  double s = std::clamp(b0, 0.0, 1.0);
  double e = std::clamp(b1, 0.0, 1.0);
  if (s > e) std::swap(s, e);
  return {s * duration, e * duration};
}

double iou(const Segment& a, const Segment& b) {
  double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  double uni = a.length() + b.length() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double recall_at_iou(std::span<const Segment> preds, std::span<const Segment> truths, double m) {
  if (preds.size() != truths.size())
    throw ContractError("recall needs aligned lists, got " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(truths.size()) + " sentences");
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += iou(preds[i], truths[i]) > m;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(preds.size());
}

RecallTriple recall_triple(std::span<const Segment> preds, std::span<const Segment> truths) {
  return {recall_at_iou(preds, truths, 0.3), recall_at_iou(preds, truths, 0.5), recall_at_iou(preds, truths, 0.7)};
}

std::vector<double> relevance_mask(const Segment& truth, double duration, Index n) {
  std::vector<double> mask(static_cast<std::size_t>(n), 0.0);
  bool any = false;
  for (Index i = 0; i < n; ++i) {
    double t = (static_cast<double>(i) + 0.5) / static_cast<double>(n) * duration;
    if (t >= truth.start && t <= truth.end) {
      mask[static_cast<std::size_t>(i)] = 1.0;
      any = true;
    }
  }
  if (!any) throw ContractError("segment covers no sampled position");
  return mask;
}

// ---------------------------------------------------------------- files

std::vector<Annotation> read_annotations(const std::filesystem::path& path) {
  std::vector<Annotation> rows;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    std::string where = path.string() + ":" + std::to_string(i + 1);
    auto f = split(lines[i], '\t');
    if (f.size() != 5) throw FormatError(where + ": expected 5 tab-separated fields, got " + std::to_string(f.size()));
    Annotation a;
    a.video_id = std::string(f[0]);
    a.segment = {parse_double(f[1], "start"), parse_double(f[2], "end")};
    a.duration = parse_double(f[3], "duration");
    a.sentence = std::string(f[4]);
    if (a.video_id.empty()) throw FormatError(where + ": empty video id");
    if (!(a.duration > 0) || a.segment.start < 0 || a.segment.end > a.duration || a.segment.start >= a.segment.end)
      throw FormatError(where + ": segment must satisfy 0 <= start < end <= duration");
    rows.push_back(std::move(a));
  }
  return rows;
}

void write_annotations(const std::filesystem::path& path, std::span<const Annotation> rows) {
  write_atomic(path, [&](std::ostream& out) {
    for (const auto& a : rows)
      out << a.video_id << '\t' << format_double(a.segment.start) << '\t' << format_double(a.segment.end) << '\t'
          << format_double(a.duration) << '\t' << a.sentence << '\n';
  });
}

void write_predictions(const std::filesystem::path& path, std::span<const LocPrediction> rows) {
  write_atomic(path, [&](std::ostream& out) {
    out << std::fixed << std::setprecision(6);
    for (const auto& p : rows) {
      out << p.video_id << '\t' << p.segment.start << '\t' << p.segment.end << '\t';
      for (std::size_t i = 0; i < p.relevance.size(); ++i) out << (i ? "," : "") << p.relevance[i];
      out << '\n';
    }
  });
}

std::vector<LocPrediction> read_predictions(const std::filesystem::path& path) {
  std::vector<LocPrediction> rows;
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto f = split(lines[i], '\t');
    if (f.size() != 4)
      throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": expected 4 tab-separated fields");
    LocPrediction p;
    p.video_id = std::string(f[0]);
    p.segment = {parse_double(f[1], "start"), parse_double(f[2], "end")};
    for (auto v : split(f[3], ',')) p.relevance.push_back(parse_double(v, "relevance"));
    rows.push_back(std::move(p));
  }
  return rows;
}

// ---------------------------------------------------------------- random baselines

namespace {

RecallTriple average(RecallTriple sum, int trials) {
  double k = 1.0 / static_cast<double>(trials);
  return {sum.r03 * k, sum.r05 * k, sum.r07 * k};
}

void accumulate(RecallTriple& acc, std::span<const Segment> preds, std::span<const Segment> truths) {
  RecallTriple r = recall_triple(preds, truths);
  acc.r03 += r.r03;
  acc.r05 += r.r05;
  acc.r07 += r.r07;
}

std::vector<Segment> truth_segments(std::span<const Annotation> truths) {
  std::vector<Segment> out;
  for (const auto& a : truths) out.push_back(a.segment);
  return out;
}

}  // namespace

RecallTriple random_window_baseline(std::span<const Annotation> truths, Rng& rng, int trials,
                                    std::span<const int> window_frames, double fps) {
  if (trials < 1) throw ContractError("need at least one trial");
  std::vector<Segment> gt = truth_segments(truths);
  std::vector<std::vector<Segment>> candidates;
  for (const auto& a : truths) {
    double frames = a.duration * fps;
    std::vector<Segment> windows;
    for (int len : window_frames) {
      if (len > frames) continue;
      double stride = len / 2.0;
      for (double s = 0.0; s + len <= frames + 1e-9; s += stride) windows.push_back({s / fps, (s + len) / fps});
    }
    if (windows.empty()) windows.push_back({0.0, a.duration});
    candidates.push_back(std::move(windows));
  }
  RecallTriple acc;
  std::vector<Segment> preds(gt.size());
  for (int t = 0; t < trials; ++t) {
    for (std::size_t i = 0; i < gt.size(); ++i) preds[i] = candidates[i][rng.below(candidates[i].size())];
    accumulate(acc, preds, gt);
  }
  return average(acc, trials);
}

RecallTriple random_uniform_baseline(std::span<const Annotation> truths, Rng& rng, int trials) {
  if (trials < 1) throw ContractError("need at least one trial");
  std::vector<Segment> gt = truth_segments(truths);
  RecallTriple acc;
  std::vector<Segment> preds(gt.size());
  for (int t = 0; t < trials; ++t) {
    for (std::size_t i = 0; i < gt.size(); ++i) {
      double u = rng.uniform(), v = rng.uniform();
      preds[i] = {std::min(u, v) * truths[i].duration, std::max(u, v) * truths[i].duration};
    }
    accumulate(acc, preds, gt);
  }
  return average(acc, trials);
}

RecallTriple shuffled_baseline(std::span<const Segment> preds, std::span<const Annotation> truths, Rng& rng,
                               int trials) {
  if (preds.size() != truths.size()) throw ContractError("shuffled baseline needs aligned lists");
  if (trials < 1) throw ContractError("need at least one trial");
  std::size_t n = preds.size();
  if (n < 2) throw ContractError("shuffled baseline needs at least two videos");
  // Fractions of each video's own duration, so videos of different length
  // can be paired.
  std::vector<Segment> frac(n), gt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dur = truths[i].duration;
    frac[i] = {preds[i].start / dur, preds[i].end / dur};
    gt[i] = {truths[i].segment.start / dur, truths[i].segment.end / dur};
  }
  RecallTriple acc;
  std::vector<std::size_t> perm(n);
  std::vector<Segment> paired(n);
  for (int t = 0; t < trials; ++t) {
    // Sattolo's algorithm yields a single cycle, hence no fixed points.
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i)]);
    for (std::size_t i = 0; i < n; ++i) paired[i] = gt[perm[i]];
    accumulate(acc, frac, paired);
  }
  return average(acc, trials);
}

}  // namespace pmi
