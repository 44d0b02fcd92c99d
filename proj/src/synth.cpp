// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace pmi {

// ---------------------------------------------------------------- feature files

namespace {

static_assert(std::endian::native == std::endian::little, "feature files are written in native little-endian order");

template <typename T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T get(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

void write_feature(const std::filesystem::path& path, const RowMatrix& m) {
  std::string buf;
  buf.reserve(kFeatureHeaderBytes + static_cast<std::size_t>(m.size()) * 4);
  buf.append("PMIF", 4);
  put<std::uint16_t>(buf, kFeatureVersion);
  put<std::uint16_t>(buf, 0);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i) put<float>(buf, static_cast<float>(m.data()[i]));
  write_atomic(path, [&](std::ostream& out) { out.write(buf.data(), static_cast<std::streamsize>(buf.size())); }, true);
}

RowMatrix read_feature(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open feature file " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || buf.compare(0, 4, "PMIF") != 0) throw BadMagicError(path.string() + ": not a PMIF feature file");
  if (buf.size() < kFeatureHeaderBytes) throw TruncatedError(path.string() + ": truncated header");
  auto version = get<std::uint16_t>(buf.data() + 4);
  if (version != kFeatureVersion)
    throw VersionError(path.string() + ": unsupported version " + std::to_string(version));
  auto n = get<std::uint32_t>(buf.data() + 8);
  auto d = get<std::uint32_t>(buf.data() + 12);
  std::size_t expected = kFeatureHeaderBytes + static_cast<std::size_t>(n) * d * 4;
  if (buf.size() != expected)
    throw TruncatedError(path.string() + ": payload holds " + std::to_string(buf.size() - kFeatureHeaderBytes) +
                         " bytes, header promises " + std::to_string(expected - kFeatureHeaderBytes));
  RowMatrix m(n, d);
  const char* p = buf.data() + kFeatureHeaderBytes;
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(get<float>(p + 4 * i));
  return m;
}

std::vector<Index> subsample_indices(Index raw_length, Index n) {
  if (raw_length < 1 || n < 1) throw ContractError("subsampling needs non-empty lengths");
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    idx[static_cast<std::size_t>(i)] = std::min<Index>(
        raw_length - 1, static_cast<Index>(std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(raw_length) /
                                                      static_cast<double>(n))));
  return idx;
}

RowMatrix subsample(const RowMatrix& x, Index n) {
  auto idx = subsample_indices(x.rows(), n);
  RowMatrix out(n, x.cols());
  for (Index i = 0; i < n; ++i) out.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

// ---------------------------------------------------------------- manifest

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  write_atomic(path, [&](std::ostream& out) {
    out << "#video_id";
    for (auto t : m.tags) out << '\t' << to_string(t);
    out << '\n';
    for (const auto& [id, files] : m.rows) {
      out << id;
      for (const auto& f : files) out << '\t' << f;
      out << '\n';
    }
  });
}

Manifest read_manifest(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  if (lines.empty() || !lines[0].starts_with("#video_id")) throw FormatError(path.string() + ": missing manifest header");
  Manifest m;
  auto head = split(lines[0], '\t');
  for (std::size_t i = 1; i < head.size(); ++i) m.tags.push_back(parse_modality(head[i]));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto f = split(lines[i], '\t');
    if (f.size() != m.tags.size() + 1)
      throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": expected one path per modality");
    std::vector<std::string> files(f.begin() + 1, f.end());
    m.rows.emplace_back(std::string(f[0]), std::move(files));
  }
  return m;
}

namespace {

void write_embeddings_and_features(const std::filesystem::path& dir, const std::vector<ModalityTag>& tags,
                                   const std::vector<std::pair<std::string, const ModalityBundle*>>& videos,
                                   const EmbeddingTable& emb) {
  Manifest manifest;
  manifest.tags = tags;
  for (const auto& [id, bundle] : videos) {
    std::vector<std::string> files;
    for (Index m = 0; m < bundle->size(); ++m) {
      std::string rel = "features/" + id + "." + std::string(to_string(tags[static_cast<std::size_t>(m)])) + ".pmif";
      write_feature(dir / rel, bundle->features(m).matrix());
      files.push_back(rel);
    }
    manifest.rows.emplace_back(id, std::move(files));
  }
  write_manifest(dir / "manifest.tsv", manifest);
  save_embedding_table(dir / "embeddings.txt", emb);
}

std::vector<std::pair<std::string, ModalityBundle>> read_features(const std::filesystem::path& dir,
                                                                  std::vector<ModalityTag>& tags,
                                                                  std::vector<Index>& dims) {
  Manifest manifest = read_manifest(dir / "manifest.tsv");
  tags = manifest.tags;
  dims.clear();
  std::vector<std::pair<std::string, ModalityBundle>> out;
  for (const auto& [id, files] : manifest.rows) {
    ModalityBundle b;
    for (std::size_t m = 0; m < files.size(); ++m)
      b.modalities.emplace_back(tags[m], Tensor::from_matrix(read_feature(dir / files[m])));
    b.validate();
    if (dims.empty())
      for (Index m = 0; m < b.size(); ++m) dims.push_back(b.features(m).dim(1));
    out.emplace_back(id, std::move(b));
  }
  return out;
}

EmbeddingTable random_embeddings(const std::vector<std::string>& words, Index dim, Rng& rng) {
  EmbeddingTable t;
  t.tokens = words;
  t.vectors.resize(static_cast<Index>(words.size()), dim);
  for (Index r = 0; r < t.vectors.rows(); ++r)
    for (Index c = 0; c < dim; ++c) t.vectors(r, c) = round_f32(rng.normal());
  return t;
}

}  // namespace

// ---------------------------------------------------------------- localization set

namespace {

constexpr std::pair<Coupling, std::string_view> kCouplingNames[] = {
    {Coupling::xor_pair, "xor_pair"}, {Coupling::single_modality, "single_modality"},
    {Coupling::all_modality, "all_modality"}};

const std::vector<std::string>& query_prefixes() {
  static const std::vector<std::string> p{"find the moment where the two cues",
                                          "when do the streams",
                                          "locate the shot whose signals",
                                          "the part where both channels"};
  return p;
}

std::string localization_sentence(Rng& rng, bool differ) {
  const auto& prefixes = query_prefixes();
  return prefixes[rng.below(prefixes.size())] + (differ ? " differ" : " agree");
}

}  // namespace

std::string_view to_string(Coupling c) {
  for (const auto& [v, n] : kCouplingNames)
    if (v == c) return n;
  return "?";
}

Coupling parse_coupling(std::string_view name) {
  for (const auto& [v, n] : kCouplingNames)
    if (n == name) return v;
  throw ContractError("unknown coupling mode '" + std::string(name) + "'");
}

void SynthSpec::validate() const {
  if (tags.size() != dims.size() || tags.empty()) throw ContractError("one dimension per modality tag is required");
  if (num_videos < 1 || raw_length < 8) throw ContractError("need at least one video of at least 8 positions");
  if (!(noise >= 0)) throw DomainError("noise level must be non-negative");
  if (!(seg_min > 0) || seg_min > seg_max || 2 * seg_max + 0.05 > 1.0)
    throw DomainError("infeasible segment range: two segments of up to " + std::to_string(seg_max) +
                      " plus a gap must fit in the video");
  if (seg_min * static_cast<double>(raw_length) < 2.0) throw DomainError("segments shorter than two positions");
  if (coupling == Coupling::xor_pair && tags.size() < 2) throw ContractError("xor_pair coupling needs two modalities");
  for (Index d : dims)
    if (d < signal_channels) throw ContractError("every modality needs at least signal_channels channels");
  if (!(duration_min > 0) || duration_min > duration_max) throw DomainError("bad duration range");
}

double relation_sign(std::string_view sentence) {
  for (const auto& t : tokenize(sentence)) {
    if (t == "agree") return 1.0;
    if (t == "differ") return -1.0;
  }
  return 0.0;
}

LocDataset gen_localization_set(const SynthSpec& spec) {
  spec.validate();
  LocDataset data;
  data.tags = spec.tags;
  data.dims = spec.dims;
  Rng master(spec.seed);
  Index t_len = spec.raw_length;
  Index m_count = static_cast<Index>(spec.tags.size());

  for (Index v = 0; v < spec.num_videos; ++v) {
    Rng rng = master.fork(static_cast<std::uint64_t>(v));
    LocVideo video;
    std::ostringstream id;
    id << "v" << std::setw(5) << std::setfill('0') << v;
    video.id = id.str();
    double duration = round_f32(rng.uniform(spec.duration_min, spec.duration_max));

    // Target and decoy lengths in whole positions; they never touch.
    auto draw_len = [&] {
      double f = rng.uniform(spec.seg_min, spec.seg_max);
      return std::max<Index>(2, static_cast<Index>(std::lround(f * static_cast<double>(t_len))));
    };
    Index len_target = draw_len();
    Index len_decoy = draw_len();
    Index gap = std::max<Index>(1, static_cast<Index>(std::ceil(0.05 * static_cast<double>(t_len))));
    Index free = t_len - len_target - len_decoy - gap;
    Index u1 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(free + 1)));
    Index u2 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(free + 1)));
    if (u1 > u2) std::swap(u1, u2);
    bool target_first = rng.bit();
    Index first_len = target_first ? len_target : len_decoy;
    Index first_start = u1;
    Index second_start = first_start + first_len + gap + (u2 - u1);
    Index target_start = target_first ? first_start : second_start;
    Index decoy_start = target_first ? second_start : first_start;

    bool differ = rng.bit();
    // Bits as signs; "differ" means a != b.
    double a_target = rng.bit() ? 1.0 : -1.0;
    double b_target = differ ? -a_target : a_target;
    double a_decoy = rng.bit() ? 1.0 : -1.0;
    double b_decoy = differ ? a_decoy : -a_decoy;

    for (Index m = 0; m < m_count; ++m) {
      Index d = spec.dims[static_cast<std::size_t>(m)];
      RowMatrix x(t_len, d);
      for (Index t = 0; t < t_len; ++t)
        for (Index c = 0; c < d; ++c) x(t, c) = spec.noise * rng.normal();
      auto plant = [&](Index start, Index len, double value) {
        for (Index t = start; t < start + len; ++t)
          for (Index c = 0; c < spec.signal_channels; ++c) x(t, c) += value;
      };
      // Signs per shot for this modality under each coupling.
      double sign_target = 0.0, sign_decoy = 0.0;
      double rel = differ ? -1.0 : 1.0;
      switch (spec.coupling) {
        case Coupling::xor_pair:
          if (m == 0) sign_target = a_target, sign_decoy = a_decoy;
          if (m == 1) sign_target = b_target, sign_decoy = b_decoy;
          break;
        case Coupling::single_modality:
          if (m == 0) sign_target = rel, sign_decoy = -rel;
          if (m == 1) sign_target = b_target, sign_decoy = b_decoy;
          break;
        case Coupling::all_modality:
          sign_target = rel, sign_decoy = -rel;
          break;
      }
      if (sign_target != 0.0) plant(target_start, len_target, sign_target);
      if (sign_decoy != 0.0) plant(decoy_start, len_decoy, sign_decoy);
      for (Index i = 0; i < x.size(); ++i) x.data()[i] = round_f32(x.data()[i]);
      video.raw.modalities.emplace_back(spec.tags[static_cast<std::size_t>(m)], Tensor::from_matrix(x));
    }

    auto seconds = [&](Index pos) { return round_f32(static_cast<double>(pos) / static_cast<double>(t_len) * duration); };
    video.annotation = {video.id, {seconds(target_start), seconds(target_start + len_target)}, duration,
                        localization_sentence(rng, differ)};
    video.differ = differ;
    video.decoy = {seconds(decoy_start), seconds(decoy_start + len_decoy)};
    data.videos.push_back(std::move(video));
  }

  std::vector<std::string> words;
  Vocabulary vocab;
  for (const auto& p : query_prefixes())
    for (const auto& w : tokenize(p)) vocab.add(w);
  vocab.add("agree");
  vocab.add("differ");
  for (Index i = kNumReservedIds; i < vocab.size(); ++i) words.push_back(vocab.token(i));
  Rng emb_rng = master.fork(0xE3B);
  data.embeddings = random_embeddings(words, spec.embed_dim, emb_rng);
  return data;
}

void write_localization_set(const std::filesystem::path& dir, const LocDataset& data) {
  std::vector<std::pair<std::string, const ModalityBundle*>> videos;
  std::vector<Annotation> rows;
  for (const auto& v : data.videos) {
    videos.emplace_back(v.id, &v.raw);
    rows.push_back(v.annotation);
  }
  write_embeddings_and_features(dir, data.tags, videos, data.embeddings);
  write_annotations(dir / "annotations.tsv", rows);
}

LocDataset read_localization_set(const std::filesystem::path& dir) {
  LocDataset data;
  auto features = read_features(dir, data.tags, data.dims);
  auto rows = read_annotations(dir / "annotations.tsv");
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < features.size(); ++i) by_id.emplace(features[i].first, i);
  for (auto& a : rows) {
    auto it = by_id.find(a.video_id);
    if (it == by_id.end()) throw FormatError("annotation for unknown video " + a.video_id);
    LocVideo v;
    v.id = a.video_id;
    v.raw = features[it->second].second;
    v.differ = relation_sign(a.sentence) < 0;
    v.annotation = std::move(a);
    data.videos.push_back(std::move(v));
  }
  data.embeddings = load_embedding_table(dir / "embeddings.txt");
  return data;
}

// ---------------------------------------------------------------- probes

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractError("auc needs aligned scores and labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with average ranks for ties.
  double rank_sum = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double avg_rank = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum += avg_rank;
    i = j;
  }
  for (int l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw ContractError("auc needs both classes");
  double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

ProbeReport probe_certificate(const LocDataset& data, Index positions) {
  if (data.videos.size() < 4) throw ContractError("probing needs at least four videos");
  if (data.tags.size() < 2) throw ContractError("probing needs two modalities");
  Index d1 = data.dims[0];
  Index dp = std::min(data.dims[0], data.dims[1]);
  std::size_t half = data.videos.size() / 2;

  auto rows_for = [&](std::size_t begin, std::size_t end, bool product, RowMatrix& feats, std::vector<int>& labels) {
    Index cols = product ? dp + 1 : 2 * d1 + 2;
    std::vector<Vector> out;
    labels.clear();
    for (std::size_t v = begin; v < end; ++v) {
      const LocVideo& video = data.videos[v];
      RowMatrix x1 = subsample(video.raw.features(0).matrix(), positions);
      RowMatrix x2 = subsample(video.raw.features(1).matrix(), positions);
      std::vector<double> mask = relevance_mask(video.annotation.segment, video.annotation.duration, positions);
      double s = relation_sign(video.annotation.sentence);
      for (Index n = 0; n < positions; ++n) {
        Vector f(cols);
        if (product) {
          for (Index c = 0; c < dp; ++c) f[c] = s * x1(n, c) * x2(n, c);
          f[dp] = 1.0;
        } else {
          for (Index c = 0; c < d1; ++c) {
            f[c] = x1(n, c);
            f[d1 + c] = s * x1(n, c);
          }
          f[2 * d1] = s;
          f[2 * d1 + 1] = 1.0;
        }
        out.push_back(f);
        labels.push_back(mask[static_cast<std::size_t>(n)] > 0.5);
      }
    }
    feats.resize(static_cast<Index>(out.size()), cols);
    for (std::size_t i = 0; i < out.size(); ++i) feats.row(static_cast<Index>(i)) = out[i].transpose();
  };

  auto probe = [&](bool product) {
    RowMatrix train, test;
    std::vector<int> ytrain, ytest;
    rows_for(0, half, product, train, ytrain);
    rows_for(half, data.videos.size(), product, test, ytest);
    Vector y(static_cast<Index>(ytrain.size()));
    for (std::size_t i = 0; i < ytrain.size(); ++i) y[static_cast<Index>(i)] = ytrain[i];
    Vector w = train.colPivHouseholderQr().solve(y);
    Vector scores = test * w;
    return roc_auc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), ytest);
  };
  return {probe(false), probe(true)};
}

// ---------------------------------------------------------------- caption set

const std::vector<std::string>& object_words() {
  static const std::vector<std::string> w{"dog", "car", "child", "bird"};
  return w;
}
const std::vector<std::string>& action_words() {
  static const std::vector<std::string> w{"runs", "jumps", "turns", "waits"};
  return w;
}
const std::vector<std::string>& sound_words() {
  static const std::vector<std::string> w{"bell", "drum", "siren", "whistle"};
  return w;
}

std::string render_caption(const CaptionFactors& f) {
  return "a " + object_words()[static_cast<std::size_t>(f.object)] + " " +
         action_words()[static_cast<std::size_t>(f.action)] + " while a " +
         sound_words()[static_cast<std::size_t>(f.sound)] + " plays";
}

CaptionDataset gen_caption_set(const CaptionSpec& spec) {
  if (spec.tags.size() != spec.dims.size() || spec.tags.empty())
    throw ContractError("one dimension per modality tag is required");
  if (!(spec.noise >= 0)) throw DomainError("noise level must be non-negative");
  CaptionDataset data;
  data.tags = spec.tags;
  data.dims = spec.dims;
  Rng master(spec.seed);
  auto slot_of = [](ModalityTag t) {
    switch (t) {
      case ModalityTag::visual: return 0;
      case ModalityTag::motion: return 1;
      case ModalityTag::audio: return 2;
      default: return -1;
    }
  };
  for (Index v = 0; v < spec.num_videos; ++v) {
    Rng rng = master.fork(static_cast<std::uint64_t>(v));
    CapVideo video;
    std::ostringstream id;
    id << "c" << std::setw(5) << std::setfill('0') << v;
    video.id = id.str();
    video.factors = {static_cast<Index>(rng.below(object_words().size())),
                     static_cast<Index>(rng.below(action_words().size())),
                     static_cast<Index>(rng.below(sound_words().size()))};
    Index values[3] = {video.factors.object, video.factors.action, video.factors.sound};
    for (std::size_t m = 0; m < spec.tags.size(); ++m) {
      Index d = spec.dims[m];
      RowMatrix x(spec.raw_length, d);
      for (Index i = 0; i < x.size(); ++i) x.data()[i] = spec.noise * rng.normal();
      int slot = slot_of(spec.tags[m]);
      if (slot >= 0) {
        Index block = d / 4;
        if (block < 1) throw ContractError("caption modalities need at least 4 channels");
        Index k = values[slot];
        // A slow temporal envelope keeps the pattern present at every position.
        for (Index t = 0; t < spec.raw_length; ++t) {
          double amp = 1.0 + 0.25 * std::sin(static_cast<double>(t) * 0.3 + static_cast<double>(k));
          for (Index c = k * block; c < (k + 1) * block; ++c) x(t, c) += amp;
        }
      }
      for (Index i = 0; i < x.size(); ++i) x.data()[i] = round_f32(x.data()[i]);
      video.raw.modalities.emplace_back(spec.tags[m], Tensor::from_matrix(x));
    }
    video.reference = render_caption(video.factors);
    data.videos.push_back(std::move(video));
  }
  Vocabulary vocab;
  for (const auto& v : data.videos)
    for (const auto& w : tokenize(v.reference)) vocab.add(w);
  std::vector<std::string> words;
  for (Index i = kNumReservedIds; i < vocab.size(); ++i) words.push_back(vocab.token(i));
  Rng emb_rng = master.fork(0xE3B);
  data.embeddings = random_embeddings(words, spec.embed_dim, emb_rng);
  return data;
}

void write_caption_set(const std::filesystem::path& dir, const CaptionDataset& data) {
  std::vector<std::pair<std::string, const ModalityBundle*>> videos;
  for (const auto& v : data.videos) videos.emplace_back(v.id, &v.raw);
  write_embeddings_and_features(dir, data.tags, videos, data.embeddings);
  write_atomic(dir / "captions.tsv", [&](std::ostream& out) {
    for (const auto& v : data.videos) out << v.id << '\t' << v.reference << '\n';
  });
}

CaptionDataset read_caption_set(const std::filesystem::path& dir) {
  CaptionDataset data;
  auto features = read_features(dir, data.tags, data.dims);
  std::unordered_map<std::string, std::string> refs;
  auto lines = read_lines(dir / "captions.tsv");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto f = split(lines[i], '\t');
    if (f.size() != 2) throw FormatError((dir / "captions.tsv").string() + ":" + std::to_string(i + 1) + ": expected 2 fields");
    std::string sentence;
    for (const auto& t : tokenize(f[1])) sentence += (sentence.empty() ? "" : " ") + t;
    refs.emplace(std::string(f[0]), sentence);
  }
  for (auto& [id, bundle] : features) {
    auto it = refs.find(id);
    if (it == refs.end()) throw FormatError("no caption for video " + id);
    CapVideo v;
    v.id = id;
    v.raw = std::move(bundle);
    v.reference = it->second;
    data.videos.push_back(std::move(v));
  }
  data.embeddings = load_embedding_table(dir / "embeddings.txt");
  return data;
}

}  // namespace pmi
