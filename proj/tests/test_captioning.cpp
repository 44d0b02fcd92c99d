// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include "pmi/captioning.hpp"
#include "pmi/experiments.hpp"
#include "loc_oracle.hpp"
#include "metric_oracle.hpp"
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

std::vector<TokenList> toks(std::initializer_list<const char*> s) {
  std::vector<TokenList> out;
  for (const char* x : s) out.push_back(oracle::words(x));
  return out;
}

}  // namespace

TEST_CASE("temporal attention") {
  Rng rng(51);
  ParameterSet ps;
  AttentionParams p = AttentionParams::create(ps, "att", 3, 2, 4, rng);
  for (Index i = 0; i < p.video.bias.size(); ++i) p.video.bias.mutable_values()[i] = rng.normal();

  SUBCASE("hand computation, N = 3, d = 2") {
    Tensor h = random_tensor(rng, {1, 3});
    Tensor v = random_tensor(rng, {3, 2});
    Attended a = temporal_attention(h, v, p);
    std::vector<double> scores(3);
    for (Index i = 0; i < 3; ++i) {
      double s = 0;
      for (Index k = 0; k < 4; ++k) {
        double pre = p.video.bias[k];
        for (Index c = 0; c < 3; ++c) pre += h.at(0, c) * p.state.weight.at(c, k);
        for (Index c = 0; c < 2; ++c) pre += v.at(i, c) * p.video.weight.at(c, k);
        s += std::tanh(pre) * p.v.at(k, 0);
      }
      scores[static_cast<std::size_t>(i)] = s;
    }
    double z = 0;
    for (double s : scores) z += std::exp(s);
    for (Index c = 0; c < 2; ++c) {
      double ctx = 0;
      for (Index i = 0; i < 3; ++i) {
        double w = std::exp(scores[static_cast<std::size_t>(i)]) / z;
        CHECK(std::abs(a.weights[i] - w) < 1e-10);
        ctx += w * v.at(i, c);
      }
      CHECK(std::abs(a.context.at(0, c) - ctx) < 1e-10);
    }
  }
  SUBCASE("loop oracle on tiny instances") {
    for (int trial = 0; trial < 30; ++trial) {
      Tensor h = random_tensor(rng, {1, 3});
      Tensor v = random_tensor(rng, {1 + static_cast<Index>(rng.below(3)), 2});
      Attended a = temporal_attention(h, v, p);
      auto ref = oracle::temporal_attention(h, v, p);
      for (Index i = 0; i < v.dim(0); ++i) CHECK(std::abs(a.weights[i] - ref.weights[static_cast<std::size_t>(i)]) < 1e-10);
      for (Index c = 0; c < 2; ++c) CHECK(std::abs(a.context.at(0, c) - ref.context[static_cast<std::size_t>(c)]) < 1e-10);
    }
  }
  SUBCASE("identical rows and normalization") {
    Tensor row = random_tensor(rng, {1, 2});
    Tensor v = index_select(row, std::vector<Index>{0, 0, 0, 0});
    for (int trial = 0; trial < 20; ++trial) {
      Attended a = temporal_attention(random_tensor(rng, {1, 3}, 5.0), v, p);
      CHECK((a.context.values() - row.values()).cwiseAbs().maxCoeff() < 1e-12);
      Attended b = temporal_attention(random_tensor(rng, {1, 3}, 5.0), random_tensor(rng, {7, 2}, 3.0), p);
      CHECK(std::abs(b.weights.values().sum() - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("decoder steps") {
  Rng rng(52);
  ParameterSet ps;
  DecoderParams p = DecoderParams::create(ps, "dec", 7, 3, 2, 3, 4, rng);
  Tensor v = random_param(rng, {4, 2});

  StepOutput a = decode_step(initial_state(p), v, p);
  StepOutput b = decode_step(initial_state(p), v, p);
  CHECK(a.logits.shape() == Shape{7});
  CHECK(a.logits.values() == b.logits.values());
  CHECK(a.state.step == 1);

  NamedTensors params = ps.named();
  params.emplace_back("video", v);
  auto report = finite_diff_check(
      [&] {
        DecoderState s = initial_state(p);
        StepOutput o1 = decode_step(s, v, p);
        o1.state.prev = 5;
        StepOutput o2 = decode_step(o1.state, v, p);
        return add(weighted_sum(o1.logits), weighted_sum(o2.logits, 3));
      },
      params);
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.checked > 100);
}

TEST_CASE("caption loss") {
  Rng rng(53);
  ParameterSet ps;
  DecoderParams p = DecoderParams::create(ps, "dec", 100, 4, 2, 5, 3, rng);
  Tensor v = random_tensor(rng, {3, 2});
  std::vector<Index> ref{10, 11, 12, kEosId};

  p.out.weight.mutable_values().setZero();
  p.out.bias.mutable_values().setZero();
  CHECK(std::abs(train_caption_loss(v, ref, p).item() - std::log(100.0)) < 1e-12);

  // Padding positions are excluded from the mean.
  std::vector<Index> padded{10, kPadId, 12, kEosId};
  CHECK(std::abs(train_caption_loss(v, padded, p).item() - std::log(100.0)) < 1e-12);

  std::vector<Index> eos_only{kEosId};
  p.out.bias.mutable_values()[kEosId] = 60.0;
  CHECK(train_caption_loss(v, eos_only, p).item() < 1e-20);

  CHECK_THROWS_AS(train_caption_loss(v, std::vector<Index>{}, p), ContractError);
  CHECK_THROWS_AS(train_caption_loss(v, std::vector<Index>{10, 11}, p), ContractError);

  CHECK(train_caption_loss(v, ref, p).item() == train_caption_loss(v, ref, p).item());
}

TEST_CASE("overfitting one caption") {
  Rng rng(54);
  ParameterSet ps;
  DecoderParams p = DecoderParams::create(ps, "dec", 12, 8, 4, 16, 8, rng);
  Tensor v = random_tensor(rng, {5, 4});
  std::vector<Index> ref{5, 7, 6, 9, 7, kEosId};
  AdamConfig cfg;
  cfg.lr = 1e-2;
  Adam adam(cfg);

  double best = std::numeric_limits<double>::infinity();
  int since_best = 0, longest_plateau = 0;
  for (int step = 0; step < 50; ++step) {
    ps.zero_grad();
    Tensor l = train_caption_loss(v, ref, p);
    if (l.item() < best) {
      best = l.item();
      since_best = 0;
    } else {
      longest_plateau = std::max(longest_plateau, ++since_best);
    }
    backward(l);
    adam.step(ps);
  }
  CHECK(longest_plateau <= 5);
  for (int step = 0; step < 150; ++step) {
    ps.zero_grad();
    backward(train_caption_loss(v, ref, p));
    adam.step(ps);
  }
  std::vector<Index> expected(ref.begin(), ref.end() - 1);
  CHECK(generate(v, p) == expected);
  CHECK(generate(v, p, 3) == expected);
}

TEST_CASE("decoding") {
  Rng rng(55);
  for (int trial = 0; trial < 10; ++trial) {
    ParameterSet ps;
    DecoderParams p = DecoderParams::create(ps, "dec", 9, 4, 3, 6, 5, rng);
    for (Index i = 0; i < p.out.bias.size(); ++i) p.out.bias.mutable_values()[i] = rng.normal(0, 2);
    Tensor v = random_tensor(rng, {4, 3});
    std::vector<Index> greedy = generate(v, p, 1, 12);
    CHECK(generate(v, p, 1, 12) == greedy);
    CHECK(greedy.size() <= 12);
    for (Index t : greedy) {
      CHECK(t != kPadId);
      CHECK(t != kBosId);
      CHECK(t != kEosId);
    }

    // Greedy is the argmax chain.
    DecoderState s = initial_state(p);
    std::vector<Index> chain;
    for (int step = 0; step < 12; ++step) {
      NoGradGuard guard;
      StepOutput o = decode_step(s, v, p);
      Vector lg = o.logits.values();
      lg[kPadId] = lg[kBosId] = -std::numeric_limits<double>::infinity();
      Index best = 0;
      lg.maxCoeff(&best);
      if (best == kEosId) break;
      chain.push_back(best);
      s = o.state;
      s.prev = best;
    }
    CHECK(chain == greedy);
    CHECK(generate(v, p, 4, 12).size() <= 12);
  }
  ParameterSet ps;
  DecoderParams p = DecoderParams::create(ps, "dec", 9, 4, 3, 6, 5, rng);
  CHECK_THROWS_AS(generate(random_tensor(rng, {2, 3}), p, 0), ContractError);
}

TEST_CASE("bleu") {
  SUBCASE("the cat sat") {
    auto c = toks({"the cat sat"});
    std::vector<std::vector<TokenList>> r{toks({"the cat sat down"})};
    auto b = bleu(c, r);
    double bp = std::exp(1.0 - 4.0 / 3.0);
    CHECK(std::abs(b[0] - 100.0 * bp) < 1e-9);  // 3/3 unigrams
    CHECK(std::abs(b[1] - 100.0 * bp) < 1e-9);  // 2/2 bigrams
    CHECK(std::abs(b[2] - 100.0 * bp) < 1e-9);  // 1/1 trigram
    CHECK(b[3] == 0.0);                         // no 4-grams at all
  }
  SUBCASE("identity and disjoint") {
    auto c = toks({"a dog runs while a bell plays"});
    std::vector<std::vector<TokenList>> same{c};
    CHECK(std::abs(bleu(c, same)[3] - 100.0) < 1e-12);
    std::vector<std::vector<TokenList>> other{toks({"nothing in common here"})};
    CHECK(bleu(c, other)[0] == 0.0);
  }
  SUBCASE("toy corpus against the brute-force oracle") {
    auto c = toks({"a dog runs while a bell plays", "the the the cat", "a car waits"});
    std::vector<std::vector<TokenList>> r{toks({"a dog runs while a drum plays", "a dog jumps while a bell plays"}),
                                          toks({"the cat is on the mat", "there is a cat"}),
                                          toks({"a car waits at the light"})};
    std::vector<oracle::Sentence> oc(c.begin(), c.end());
    std::vector<std::vector<oracle::Sentence>> orr(r.begin(), r.end());
    auto mine = bleu(c, r);
    auto theirs = oracle::corpus_bleu(oc, orr);
    for (int n = 0; n < 4; ++n) CHECK(std::abs(mine[static_cast<std::size_t>(n)] - theirs[static_cast<std::size_t>(n)]) < 1e-9);
    CHECK(mine[0] > 0.0);

    // Corpus order does not matter.
    std::vector<TokenList> c2{c[2], c[0], c[1]};
    std::vector<std::vector<TokenList>> r2{r[2], r[0], r[1]};
    auto permuted = bleu(c2, r2);
    for (int n = 0; n < 4; ++n) CHECK(std::abs(permuted[static_cast<std::size_t>(n)] - mine[static_cast<std::size_t>(n)]) < 1e-12);
  }
  SUBCASE("empty candidate") {
    auto c = toks({"", "a car waits"});
    std::vector<std::vector<TokenList>> r{toks({"a car"}), toks({"a car waits"})};
    std::vector<oracle::Sentence> oc(c.begin(), c.end());
    std::vector<std::vector<oracle::Sentence>> orr(r.begin(), r.end());
    auto mine = bleu(c, r);
    auto theirs = oracle::corpus_bleu(oc, orr);
    for (int n = 0; n < 4; ++n) CHECK(std::abs(mine[static_cast<std::size_t>(n)] - theirs[static_cast<std::size_t>(n)]) < 1e-9);
  }
}

TEST_CASE("cider") {
  auto c = toks({"a dog runs while a bell plays", "the cat sat", "a car waits"});
  std::vector<std::vector<TokenList>> r{toks({"a dog runs while a drum plays", "a dog jumps while a bell plays"}),
                                        toks({"the cat is on the mat", "there is a cat"}),
                                        toks({"a car waits at the light"})};
  std::vector<oracle::Sentence> oc(c.begin(), c.end());
  std::vector<std::vector<oracle::Sentence>> orr(r.begin(), r.end());
  CHECK(std::abs(cider(c, r) - oracle::corpus_cider(oc, orr)) < 1e-9);
  CHECK(cider(c, r) > 0.0);

  // A candidate equal to its only reference scores the maximum for its video.
  auto pair_c = toks({"a dog runs", "the cat sat"});
  std::vector<std::vector<TokenList>> pair_r{toks({"a dog runs"}), toks({"a cat waits"})};
  std::vector<TokenList> first{pair_c[0]};
  std::vector<std::vector<TokenList>> first_r{pair_r[0]};
  auto with = [&](const TokenList& cand) {
    std::vector<TokenList> cc{cand, pair_c[1]};
    return cider(cc, pair_r);
  };
  CHECK(with(pair_c[0]) > with(oracle::words("a dog sat")));
  CHECK(with(pair_c[0]) > with(oracle::words("dog runs a")));

  std::vector<std::vector<TokenList>> disjoint{toks({"x y z"}), toks({"u v w"})};
  CHECK(cider(pair_c, disjoint) == 0.0);

  // Document frequencies depend on the whole corpus.
  std::vector<TokenList> c3{c[0], c[1]};
  std::vector<std::vector<TokenList>> r3{r[0], r[1]};
  CHECK(cider(c3, r3) != doctest::Approx(cider(c, r)));
}

TEST_CASE("caption files") {
  auto dir = std::filesystem::temp_directory_path() / "pmi_test_captions";
  std::filesystem::create_directories(dir);
  std::vector<std::pair<std::string, std::string>> rows{{"v1", "a dog runs"}, {"v2", "a car waits"}};
  write_captions(dir / "c.tsv", rows);
  CHECK(read_captions(dir / "c.tsv") == rows);
  std::ofstream(dir / "upper.tsv") << "v1\tA Dog RUNS\n";
  CHECK(read_captions(dir / "upper.tsv")[0].second == "a dog runs");
  std::ofstream(dir / "bad.tsv") << "v1\n";
  CHECK_THROWS_AS(read_captions(dir / "bad.tsv"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("captioner end to end") {
  CaptionSpec spec;
  spec.num_videos = 4;
  CaptionDataset data = gen_caption_set(spec);
  Vocabulary vocab = caption_vocabulary(data);
  CaptionConfig cfg;
  cfg.dims = {.d = 8, .d_low = 4, .d_c = 2, .heads = 2, .k_max = 4};
  cfg.positions = 6;
  cfg.embed_dim = 4;
  cfg.hidden = 6;
  cfg.attention_dim = 4;
  auto samples = prepare_caption_samples(data, vocab, cfg.positions);
  REQUIRE(samples.size() == 4);
  CHECK(samples[0].tokens.back() == kEosId);
  CHECK(samples[0].video.features(0).dim(0) == 6);

  Captioner model(cfg, data.tags, data.dims, vocab.size(), 3);
  CHECK(model.encode(samples[0].video).shape() == Shape{6, 8});
  CaptionConfig fused = cfg;
  fused.attend_fused = true;
  Captioner direct(fused, data.tags, data.dims, vocab.size(), 3);
  CHECK(direct.encode(samples[0].video).values() ==
        pmi_encode(samples[0].video, direct.encoder(), PmiMode::full).values());

  // Gradient check through the PMI encoder, the bidirectional encoder and two
  // decoder steps.
  CapSample tiny = samples[0];
  tiny.tokens = {tiny.tokens[0], kEosId};
  auto report = finite_diff_check([&] { return model.loss(tiny); }, model.params().named());
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.checked > 1000);

  TrainOptions opt;
  opt.steps = 3;
  opt.batch = 2;
  auto logs = train_captioner(model, samples, opt);
  CHECK(logs.size() == 3);
  Captioner again(cfg, data.tags, data.dims, vocab.size(), 3);
  auto logs2 = train_captioner(again, samples, opt);
  for (std::size_t i = 0; i < logs.size(); ++i) CHECK(logs[i].loss == logs2[i].loss);
}

// Sound factors are drawn independently of object and action and live only in
// the audio stream, so held-out sound words need audio. Scored as the share of
// held-out captions naming the reference sound.
TEST_CASE("sound words need the audio stream") {
  auto sound_accuracy = [](bool with_audio, std::uint64_t seed) {
    Config cfg;
    cfg.task = Task::cap;
    cfg.seed = seed;
    cfg.train_count = 36;
    cfg.captions.seed = 5;
    cfg.captions.num_videos = 48;
    cfg.captions.raw_length = 16;
    cfg.captions.tags = {ModalityTag::visual, ModalityTag::motion};
    if (with_audio) cfg.captions.tags.push_back(ModalityTag::audio);
    cfg.captions.dims.assign(cfg.captions.tags.size(), 8);
    cfg.cap.dims = {.d = 8, .d_low = 4, .d_c = 2, .heads = 2, .k_max = 4};
    cfg.cap.positions = 8;
    cfg.cap.embed_dim = 8;
    cfg.cap.hidden = 16;
    cfg.cap.attention_dim = 8;
    cfg.adam.lr = 0.01;
    cfg.batch = 6;
    cfg.steps = 500;
    CapRun run = train_cap(cfg);
    REQUIRE(run.eval.captions.size() == run.data.test.size());
    int hits = 0;
    for (std::size_t i = 0; i < run.data.test.size(); ++i) {
      auto ref = oracle::words(run.data.test[i].reference);
      auto got = oracle::words(run.eval.captions[i].second);
      std::string sound = ref[ref.size() - 2];  // "... while a <sound> plays"
      hits += std::find(got.begin(), got.end(), sound) != got.end();
    }
    return 100.0 * hits / static_cast<double>(run.data.test.size());
  };
  double with = 0, without = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    with += sound_accuracy(true, seed) / 3.0;
    without += sound_accuracy(false, seed) / 3.0;
  }
  MESSAGE("held-out sound-word accuracy: with audio " << with << ", without " << without);
  CHECK(with > without);
}
