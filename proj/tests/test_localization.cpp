// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include "pmi/io.hpp"
#include "pmi/localization.hpp"
#include "loc_oracle.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace pmi;
using pmi::testing::random_param;
using pmi::testing::random_tensor;
using pmi::testing::weighted_sum;
namespace oracle = pmi::testing::oracle;

namespace {

InteractionDims tiny_dims(Index d = 4, Index d_low = 2, Index heads = 1) {
  return {.d = d, .d_low = d_low, .d_c = 2, .heads = heads, .k_max = 2};
}

void fill_normal(Tensor t, Rng& rng, double sd) {
  for (Index i = 0; i < t.size(); ++i) t.mutable_values()[i] = rng.normal(0.0, sd);
}

}  // namespace

TEST_CASE("text self interaction") {
  Rng rng(21);
  ParameterSet ps;
  auto dims = tiny_dims(8, 4, 2);
  Linear proj = Linear::create(ps, "proj", 6, 8, rng);
  CGMIParams p = CGMIParams::create(ps, "self", dims, rng);

  std::vector<Tensor> maps;
  Tensor one = random_tensor(rng, {1, 6});
  Tensor projected = linear(one, proj);
  sequence_interaction(projected, projected, p.attention, true, &maps);
  for (const auto& m : maps) CHECK(m.item() == 1.0);

  CHECK(text_self_interact(random_tensor(rng, {11, 6}), proj, p).shape() == Shape{11, 8});
  CHECK_THROWS_AS(text_self_interact(Tensor::zeros({0, 6}), proj, p), ShapeError);

  Tensor y = random_param(rng, {3, 6});
  NamedTensors params = ps.named();
  params.emplace_back("y", y);
  auto report = finite_diff_check([&] { return weighted_sum(text_self_interact(y, proj, p)); }, params);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("local window") {
  Tensor x = Tensor::from({5, 1}, {10, 11, 12, 13, 14});
  CHECK(local_window(x, 3, 0).values() == Tensor::from({1, 1}, {13}).values());
  CHECK(local_window(x, 0, 2).values() == Tensor::from({5, 1}, {10, 10, 10, 11, 12}).values());
  CHECK(local_window(x, 2, 1).values() == slice(x, 0, 1, 3).values());
  CHECK(local_window(x, 4, 2).values() == Tensor::from({5, 1}, {12, 13, 14, 14, 14}).values());
  CHECK_THROWS_AS(local_window(x, 5, 1), ContractError);
  CHECK(window_indices(3, 1) == std::vector<Index>{0, 0, 1, 0, 1, 2, 1, 2, 2});
}

TEST_CASE("mm unit") {
  Rng rng(22);
  ParameterSet ps;
  MMParams p = MMParams::create(ps, "mm", 2, rng);
  CHECK(mm_unit(Tensor::zeros({1, 2}), Tensor::zeros({1, 2}), p).values().isZero());

  // W^T [a | b | a*b | a+b] by hand for d = 2.
  Tensor a = Tensor::from({1, 2}, {0.5, -1.0});
  Tensor b = Tensor::from({1, 2}, {2.0, 0.25});
  double feats[8] = {0.5, -1.0, 2.0, 0.25, 1.0, -0.25, 2.5, -0.75};
  RowMatrix w = p.w.weight.matrix();
  Tensor out = mm_unit(a, b, p);
  for (Index c = 0; c < 2; ++c) {
    double expected = 0.0;
    for (Index k = 0; k < 8; ++k) expected += feats[k] * w(k, c);
    CHECK(std::abs(out.at(0, c) - expected) < 1e-12);
  }
  CHECK_THROWS_AS(mm_unit(a, Tensor::zeros({1, 3}), p), ShapeError);

  ParameterSet ps2;
  MMParams q = MMParams::create(ps2, "mm", 3, rng, true);
  fill_normal(q.w.bias, rng, 1.0);
  CHECK(mm_unit(Tensor::zeros({1, 3}), Tensor::zeros({1, 3}), q).values() == q.w.bias.values());

  Tensor ap = random_param(rng, {4, 3});
  Tensor bp = random_param(rng, {4, 3});
  NamedTensors params = ps2.named();
  params.emplace_back("a", ap);
  params.emplace_back("b", bp);
  auto report = finite_diff_check([&] { return weighted_sum(mm_unit(ap, bp, q)); }, params);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("vtli against the per-position oracle") {
  Rng rng(23);
  SUBCASE("tiny instances") {
    for (int trial = 0; trial < 30; ++trial) {
      ParameterSet ps;
      VtliParams p = VtliParams::create(ps, "v", tiny_dims(4, 2, 1 + static_cast<Index>(rng.below(2))), rng);
      Index n = 1 + static_cast<Index>(rng.below(3));
      Index l = 1 + static_cast<Index>(rng.below(3));
      Index w = static_cast<Index>(rng.below(3));
      Tensor x = random_tensor(rng, {n, 4});
      Tensor y = random_tensor(rng, {l, 4});
      CHECK(oracle::max_abs_diff(vtli(x, y, w, p), oracle::vtli(x, y, w, p)) < 1e-10);
    }
  }
  SUBCASE("two positions, no window, d = 2") {
    ParameterSet ps;
    InteractionDims dims{.d = 2, .d_low = 1, .d_c = 1, .heads = 1, .k_max = 1};
    VtliParams p = VtliParams::create(ps, "v", dims, rng);
    Tensor x = Tensor::from({2, 2}, {1.0, -0.5, 0.25, 2.0});
    Tensor y = Tensor::from({2, 2}, {0.5, 0.5, -1.0, 1.5});
    CHECK(oracle::max_abs_diff(vtli(x, y, 0, p), oracle::vtli(x, y, 0, p)) < 1e-10);
  }
  SUBCASE("shape and constant sentence") {
    ParameterSet ps;
    VtliParams p = VtliParams::create(ps, "v", tiny_dims(8, 4, 2), rng);
    Tensor x = random_tensor(rng, {16, 8});
    CHECK(vtli(x, random_tensor(rng, {5, 8}), 2, p).shape() == Shape{16, 8});

    Tensor c = random_tensor(rng, {1, 8});
    Tensor y = index_select(c, std::vector<Index>{0, 0, 0});
    Tensor pooled = random_tensor(rng, {6, 8});
    RowMatrix attended = sequence_interaction(pooled, y, p.video_to_text, false).matrix();
    RowMatrix expected = linear(linear(c, p.video_to_text.value), p.video_to_text.merge).matrix();
    for (Index r = 0; r < 6; ++r) CHECK((attended.row(r) - expected.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("gradcheck") {
    ParameterSet ps;
    VtliParams p = VtliParams::create(ps, "v", tiny_dims(4, 2, 2), rng);
    Tensor x = random_param(rng, {5, 4});
    Tensor y = random_param(rng, {3, 4});
    NamedTensors params = ps.named();
    params.emplace_back("x", x);
    params.emplace_back("y", y);
    auto report = finite_diff_check([&] { return weighted_sum(vtli(x, y, 1, p)); }, params);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("temporal convolution matches a loop") {
  Rng rng(24);
  ParameterSet ps;
  Conv1d conv = Conv1d::create(ps, "c", 3, 2, 3, rng);
  fill_normal(conv.bias, rng, 1.0);
  Tensor x = random_tensor(rng, {5, 3});
  Tensor out = conv1d(x, conv);
  for (Index t = 0; t < 5; ++t)
    for (Index o = 0; o < 2; ++o) {
      double acc = conv.bias[o];
      for (Index k = 0; k < 3; ++k) {
        Index src = std::clamp<Index>(t + k - 1, 0, 4);
        for (Index c = 0; c < 3; ++c) acc += x.at(src, c) * conv.weight.at(k * 3 + c, o);
      }
      CHECK(std::abs(out.at(t, o) - acc) < 1e-12);
    }
  CHECK_THROWS_AS(Conv1d::create(ps, "even", 3, 2, 2, rng), ContractError);
}

TEST_CASE("localization head") {
  Rng rng(25);
  SUBCASE("channel plans") {
    CHECK(default_channel_plan(512, 3) == std::vector<Index>{256, 128, 1});
    CHECK(default_channel_plan(16, 1) == std::vector<Index>{1});
    ParameterSet ps;
    std::vector<Index> bad{4, 2};
    CHECK_THROWS_AS(HeadParams::create(ps, "h", 8, bad, 3, 8, rng), ContractError);
  }
  SUBCASE("single layer") {
    ParameterSet ps;
    std::vector<Index> plan{1};
    HeadParams h = HeadParams::create(ps, "h", 4, plan, 3, 6, rng);
    Tensor z = random_tensor(rng, {6, 4});
    Tensor y = random_tensor(rng, {2, 4});
    LocalizationOutput out = loc_head(z, y, h);
    REQUIRE(out.layers.size() == 1);
    std::vector<Index> zeros(6, 0);
    Tensor text = index_select(reshape(mean(y, 0), {1, 4}), zeros);
    CHECK(out.r.values() == softmax(reshape(conv1d(concat({z, text}, 1), h.convs[0]), {6}), 0).values());
  }
  SUBCASE("relevance is a distribution") {
    ParameterSet ps;
    auto plan = default_channel_plan(8, 3);
    HeadParams h = HeadParams::create(ps, "h", 8, plan, 3, 10, rng);
    for (int trial = 0; trial < 50; ++trial) {
      LocalizationOutput out = loc_head(random_tensor(rng, {10, 8}, 3.0), random_tensor(rng, {4, 8}), h);
      CHECK(std::abs(out.r.values().sum() - 1.0) < 1e-6);
      CHECK(out.r.values().minCoeff() > 0.0);
      CHECK(out.b.shape() == Shape{2});
    }
  }
  SUBCASE("gradcheck K = 3, N = 8") {
    ParameterSet ps;
    auto plan = default_channel_plan(8, 3);
    HeadParams h = HeadParams::create(ps, "h", 8, plan, 3, 8, rng);
    Tensor z = random_param(rng, {8, 8});
    Tensor y = random_param(rng, {3, 8});
    NamedTensors params = ps.named();
    params.emplace_back("z", z);
    params.emplace_back("y", y);
    auto report = finite_diff_check(
        [&] {
          LocalizationOutput out = loc_head(z, y, h);
          return add(weighted_sum(out.b), weighted_sum(out.r, 7));
        },
        params);
    CHECK(report.max_rel_error < 1e-4);
    // Text channels are constant in time and cancelled by instance norm and
    // the softmax, so their weights carry no gradient.
    CHECK(report.vanishing > 0);
  }
}

TEST_CASE("norm loss") {
  Tensor on_target = Tensor::from({2, 2}, {0.6, 0.8, 1.0, 0.0});
  std::vector<Tensor> layers{on_target};
  CHECK(std::abs(norm_loss(layers, 1.0).item()) < 1e-15);
  std::vector<Tensor> single{Tensor::from({1, 2}, {0.0, 2.0})};
  CHECK(norm_loss(single, 1.0).item() == 1.0);
  CHECK_THROWS_AS(norm_loss(single, 0.0), DomainError);

  Rng rng(26);
  Tensor a = random_param(rng, {4, 3});
  a.mutable_values().array() += 2.0;
  Tensor b = random_param(rng, {4, 2});
  b.mutable_values().array() -= 2.0;
  auto report = finite_diff_check([&] { return norm_loss(std::vector<Tensor>{a, b}, 1.0); }, {{"a", a}, {"b", b}});
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("prediction loss closed forms") {
  const double lambda = 5.0;
  std::vector<double> b_hat{0.2, 0.6};
  Tensor b = Tensor::from({2}, {0.2, 0.6});

  std::vector<double> full(128, 1.0);
  Tensor uniform = Tensor::full({128}, 1.0 / 128.0);
  double loss = pred_loss(b, uniform, b_hat, full, lambda, 1.0).item();
  CHECK(std::abs(loss - lambda * std::log(128.0)) < 1e-12);
  CHECK(std::abs(loss - 24.260151319598084) < 1e-6);

  // Mass p spread evenly over the k masked positions: -lambda log(p / k).
  std::vector<double> mask(10, 0.0);
  for (int i = 2; i < 6; ++i) mask[static_cast<std::size_t>(i)] = 1.0;
  for (double p : {1.0, 0.9, 0.5, 0.1}) {
    Vector r(10);
    for (int i = 0; i < 10; ++i) r[i] = mask[static_cast<std::size_t>(i)] ? p / 4.0 : (1.0 - p) / 6.0;
    double l = pred_loss(b, Tensor({10}, r), b_hat, mask, lambda, 1.0).item();
    CHECK(std::abs(l - (-lambda * std::log(p / 4.0))) < 1e-12);
  }

  // Shifting mass out of the mask strictly increases the loss.
  Rng rng(27);
  for (int trial = 0; trial < 100; ++trial) {
    Vector r(10);
    for (int i = 0; i < 10; ++i) r[i] = rng.uniform(0.1, 1.0);
    r /= r.sum();
    double before = pred_loss(b, Tensor({10}, r), b_hat, mask, lambda, 1.0).item();
    Index from = 2 + static_cast<Index>(rng.below(4));
    Index to = rng.bit() ? static_cast<Index>(rng.below(2)) : 6 + static_cast<Index>(rng.below(4));
    double moved = r[from] * rng.uniform(0.05, 0.9);
    r[from] -= moved;
    r[to] += moved;
    CHECK(pred_loss(b, Tensor({10}, r), b_hat, mask, lambda, 1.0).item() > before);
  }

  // Moving b toward b_hat along one coordinate never raises the Huber term.
  std::vector<double> one{1.0};
  Tensor r1 = Tensor::from({1}, {1.0});
  for (int trial = 0; trial < 200; ++trial) {
    double b0 = rng.uniform(-3, 3), b1 = rng.uniform(-3, 3);
    int coord = rng.bit();
    double start[2] = {b0, b1};
    double closer[2] = {b0, b1};
    closer[coord] = b_hat[static_cast<std::size_t>(coord)] + rng.uniform(0, 1) * (start[coord] - b_hat[static_cast<std::size_t>(coord)]);
    double l0 = pred_loss(Tensor::from({2}, {start[0], start[1]}), r1, b_hat, one, lambda, 1.0).item();
    double l1 = pred_loss(Tensor::from({2}, {closer[0], closer[1]}), r1, b_hat, one, lambda, 1.0).item();
    CHECK(l1 <= l0);
  }

  std::vector<double> empty(4, 0.0);
  CHECK_THROWS_AS(pred_loss(b, Tensor::full({4}, 0.25), b_hat, empty, lambda, 1.0), ContractError);
}

TEST_CASE("total loss") {
  CHECK(total_loss(Tensor::scalar(1.0), Tensor::scalar(100.0), 0.001).item() == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(total_loss(Tensor::scalar(2.5), Tensor::scalar(100.0), 0.0).item() == 2.5);

  Rng rng(28);
  ParameterSet ps;
  auto plan = default_channel_plan(8, 3);
  HeadParams h = HeadParams::create(ps, "h", 8, plan, 3, 8, rng);
  LocalizationOutput out = loc_head(random_tensor(rng, {8, 8}), random_tensor(rng, {3, 8}), h);
  std::vector<double> mask{0, 0, 1, 1, 1, 0, 0, 0};
  std::vector<double> b_hat{0.25, 0.6};
  Tensor pred = pred_loss(out.b, out.r, b_hat, mask, 5.0, 1.0);
  Tensor norm = norm_loss(std::span<const Tensor>(out.layers.data(), 2), 1.0);
  backward(total_loss(pred, norm, 0.001));
  CHECK(h.boundary.weight.grad().norm() > 0.0);
  CHECK(h.convs[0].weight.grad().norm() > 0.0);
  CHECK(h.convs[2].weight.grad().norm() > 0.0);
}

TEST_CASE("segment decoding and recall") {
  Segment s = decode_segment(0.2, 0.5, 30.0);
  CHECK(s.start == doctest::Approx(6.0));
  CHECK(s.end == doctest::Approx(15.0));
  Segment swapped = decode_segment(0.7, 0.3, 1.0);
  CHECK(swapped.start == 0.3);
  CHECK(swapped.end == 0.7);
  Segment clamped = decode_segment(-0.1, 1.2, 1.0);
  CHECK(clamped.start == 0.0);
  CHECK(clamped.end == 1.0);

  Rng rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    Segment a = decode_segment(rng.uniform(), rng.uniform(), 10.0);
    Segment b = decode_segment(rng.uniform(), rng.uniform(), 10.0);
    CHECK(iou(a, b) == iou(b, a));
    if (a.length() > 0) CHECK(iou(a, a) == 1.0);
  }
  CHECK(iou({1, 2}, {3, 4}) == 0.0);
  CHECK(iou({1, 1}, {1, 1}) == 0.0);
  CHECK(iou({0, 2}, {1, 3}) == doctest::Approx(1.0 / 3.0));

  std::vector<Segment> truth{{0, 2}, {3, 5}, {1, 4}};
  for (double m : {0.1, 0.5, 0.9}) CHECK(recall_at_iou(truth, truth, m) == 100.0);
  std::vector<Segment> disjoint{{5, 6}, {0, 1}, {6, 9}};
  CHECK(recall_at_iou(disjoint, truth, 0.3) == 0.0);
  // IoU exactly 0.5 does not count at m = 0.5.
  std::vector<Segment> half{{0, 1}, {3, 5}, {1, 4}};
  CHECK(recall_at_iou(half, truth, 0.5) == doctest::Approx(200.0 / 3.0));
  CHECK_THROWS_AS(recall_at_iou(half, std::span<const Segment>(truth.data(), 2), 0.5), ContractError);
}

TEST_CASE("relevance mask") {
  std::vector<double> mask = relevance_mask({3.0, 6.0}, 12.0, 8);
  CHECK(mask == std::vector<double>{0, 0, 1, 1, 0, 0, 0, 0});
  CHECK_THROWS_AS(relevance_mask({0.1, 0.2}, 12.0, 8), ContractError);
}

TEST_CASE("annotation and prediction files") {
  auto dir = std::filesystem::temp_directory_path() / "pmi_test_loc";
  std::filesystem::create_directories(dir);
  std::vector<Annotation> rows{{"v1", {1.5, 4.25}, 30.0, "the cues agree"}, {"v2", {0.0, 2.0}, 12.5, "a b c"}};
  write_annotations(dir / "a.tsv", rows);
  auto back = read_annotations(dir / "a.tsv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].video_id == "v1");
  CHECK(back[0].segment.end == 4.25);
  CHECK(back[1].sentence == "a b c");

  std::ofstream(dir / "bad.tsv") << "v1\t5\t3\t10\tbackwards\n";
  CHECK_THROWS_AS(read_annotations(dir / "bad.tsv"), FormatError);
  std::ofstream(dir / "short.tsv") << "v1\t1\t3\n";
  CHECK_THROWS_AS(read_annotations(dir / "short.tsv"), FormatError);

  std::vector<LocPrediction> preds{{"v1", {1.0, 2.0}, {0.25, 0.75}}};
  write_predictions(dir / "p.tsv", preds);
  CHECK(read_lines(dir / "p.tsv").front() == "v1\t1.000000\t2.000000\t0.250000,0.750000");
  auto pback = read_predictions(dir / "p.tsv");
  CHECK(pback[0].relevance == std::vector<double>{0.25, 0.75});
  std::filesystem::remove_all(dir);
}

TEST_CASE("random proposal baselines") {
  // Charades-like statistics: 30 s videos, 8 s moments.
  Rng gen(30);
  std::vector<Annotation> rows;
  for (int i = 0; i < 4000; ++i) {
    double dur = std::max(12.0, gen.normal(29.8, 7.0));
    double len = std::clamp(gen.normal(8.2, 3.6), 1.5, dur);
    double start = gen.uniform(0.0, dur - len);
    rows.push_back({"v" + std::to_string(i), {start, start + len}, dur, "x"});
  }
  Rng rng(31);
  RecallTriple w = random_window_baseline(rows, rng, 20);
  CHECK(std::abs(w.r03 - 14.16) < 3.0);
  CHECK(std::abs(w.r05 - 6.05) < 3.0);
  CHECK(std::abs(w.r07 - 1.59) < 3.0);

  // Perfect predictions lose everything under the permutation null only in
  // proportion to how distinct the segments are.
  std::vector<Segment> same;
  for (const auto& a : rows) same.push_back(a.segment);
  RecallTriple s = shuffled_baseline(same, rows, rng, 3);
  CHECK(s.r05 < 40.0);
  std::vector<Annotation> identical(10, Annotation{"v", {2, 4}, 10, "x"});
  std::vector<Segment> preds(10, Segment{2, 4});
  CHECK(shuffled_baseline(preds, identical, rng, 3).r07 == 100.0);
}
