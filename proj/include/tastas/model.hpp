// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// TasTas(I, x1, ..., xn) separators: learned-filterbank encoder and
// overlap-add decoder, chunked dual-path BiLSTM blocks, sigmoid mask heads,
// the ID-Net speaker embedder and multi-stage refinement.
//
// Stage k > 1 sees [gLN(mixture latents) | gLN(stage k-1 masked latents) |
// ID-Net embeddings of the stage k-1 estimates], projected to F features by
// one linear map held as three weight blocks (bottleneck.w, fuse_est.w,
// fuse_id.w).

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tastas/audio.hpp"
#include "tastas/autodiff.hpp"
#include "tastas/error.hpp"
#include "tastas/rng.hpp"

namespace tastas {

struct ModelDims {
  size_t enc_basis = 64;   // N, encoder filters
  size_t kernel = 16;      // L, encoder window; stride L/2
  size_t feature = 64;     // F, bottleneck width inside the blocks
  size_t chunk = 100;      // K, dual-path chunk length; hop K/2
  size_t hidden = 128;     // H, LSTM units per direction
  size_t embed = 64;       // D, speaker embedding size
  size_t id_hidden = 128;  // ID-Net feed-forward width
};

struct ModelSpec {
  bool identity_aware = false;
  std::vector<size_t> stage_blocks;
  size_t num_sources = 5;
  ModelDims dims;
  int sample_rate = kDefaultSampleRate;

  size_t num_stages() const { return stage_blocks.size(); }

  // Canonical notation, e.g. "TasTas(I, 6, 6)".
  std::string Text() const {
    std::string s = "TasTas(";
    if (identity_aware) s += "I, ";
    for (size_t i = 0; i < stage_blocks.size(); ++i) s += (i ? ", " : "") + std::to_string(stage_blocks[i]);
    return s + ")";
  }

  void Validate() const {
    const ModelDims &d = dims;
    if (stage_blocks.empty()) throw InvalidArgument("model spec needs at least one stage");
    for (size_t b : stage_blocks)
      if (b == 0) throw InvalidArgument("stage block counts must be positive");
    if (num_sources < 1) throw InvalidArgument("model needs at least one source");
    if (d.kernel < 2 || d.kernel % 2) throw InvalidArgument("encoder kernel must be even and >= 2");
    if (d.chunk < 2 || d.chunk % 2) throw InvalidArgument("chunk length must be even and >= 2");
    if (!d.enc_basis || !d.feature || !d.hidden || !d.embed || !d.id_hidden)
      throw InvalidArgument("model dimensions must be positive");
  }
};

// Parses "TasTas(" ["I" ","] int {"," int} ")" with optional whitespace.
inline ModelSpec ParseModelSpec(const std::string &text) {
  auto fail = [&](const std::string &why) { return InvalidArgument("bad model spec '" + text + "': " + why); };
  std::string s;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) s += c;
  const std::string head = "TasTas(";
  if (s.rfind(head, 0) != 0 || s.size() < head.size() + 2 || s.back() != ')') throw fail("expected TasTas(...)");
  std::string body = s.substr(head.size(), s.size() - head.size() - 1);
  ModelSpec spec;
  std::stringstream ss(body);
  std::string tok;
  bool first = true;
  while (std::getline(ss, tok, ',')) {
    if (first && tok == "I") {
      spec.identity_aware = true;
      first = false;
      continue;
    }
    first = false;
    if (tok.empty()) throw fail("empty field");
    bool neg = tok[0] == '-';
    size_t start = (tok[0] == '-' || tok[0] == '+') ? 1 : 0;
    if (start == tok.size() || !std::all_of(tok.begin() + long(start), tok.end(), ::isdigit))
      throw fail("'" + tok + "' is not an integer");
    if (tok.size() - start > 9) throw fail("block count too large");
    long v = std::stol(tok.substr(start));
    if (neg || v <= 0) throw fail("block counts must be positive");
    spec.stage_blocks.push_back(size_t(v));
  }
  if (!body.empty() && body.back() == ',') throw fail("trailing comma");
  if (spec.stage_blocks.empty()) throw fail("no stages");
  return spec;
}

// ---- parameters

// One independently trained and frozen unit: the ID-Net or one stage.
struct Component {
  std::string name;
  std::vector<ad::Parameter> params;
  bool frozen = false;
  std::string trained_by;  // training step that produced the values

  const ad::Parameter &Get(const std::string &pname) const {
    for (const auto &p : params)
      if (p.name == pname) return p;
    throw InvalidArgument("component " + name + " has no parameter " + pname);
  }
  ad::Parameter &Get(const std::string &pname) {
    return const_cast<ad::Parameter &>(static_cast<const Component &>(*this).Get(pname));
  }
  bool Has(const std::string &pname) const {
    for (const auto &p : params)
      if (p.name == pname) return true;
    return false;
  }
  void ZeroGrad() {
    for (auto &p : params) p.ZeroGrad();
  }
};

struct Model {
  ModelSpec spec;
  uint64_t init_seed = 0;
  std::optional<Component> idnet;
  std::vector<Component> stages;
};

namespace internal {

inline uint64_t NameHash(const std::string &s) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

enum class Init { kFanIn, kZero, kOne };

inline void AddParam(Component *c, const std::string &name, Eigen::Index rows, Eigen::Index cols, Init init,
                     uint64_t seed) {
  ad::Parameter p;
  p.name = name;
  switch (init) {
    case Init::kZero: p.value = ad::Mat::Zero(rows, cols); break;
    case Init::kOne: p.value = ad::Mat::Ones(rows, cols); break;
    case Init::kFanIn: {
      Rng rng = Rng::Derive(seed, NameHash(c->name + "/" + name));
      const double bound = 1.0 / std::sqrt(double(rows));
      p.value.resize(rows, cols);
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value(i) = rng.Uniform(-bound, bound);
      break;
    }
  }
  c->params.push_back(std::move(p));
}

inline std::string BlockPrefix(size_t block, const char *pass) {
  return "block" + std::to_string(block) + "." + pass;
}

}  // namespace internal

inline std::string StageName(size_t stage_index) { return "stage" + std::to_string(stage_index + 1); }

// Parameters of stage `stage_index` (0-based), uniform fan-in initialised.
inline Component MakeStage(const ModelSpec &spec, size_t stage_index, uint64_t seed) {
  using internal::AddParam;
  using internal::Init;
  const ModelDims &d = spec.dims;
  const auto N = Eigen::Index(d.enc_basis), L = Eigen::Index(d.kernel), F = Eigen::Index(d.feature),
             H = Eigen::Index(d.hidden), S = Eigen::Index(spec.num_sources), D = Eigen::Index(d.embed);
  Component c;
  c.name = StageName(stage_index);
  AddParam(&c, "enc.w", L, N, Init::kFanIn, seed);
  AddParam(&c, "enc.b", 1, N, Init::kZero, seed);
  AddParam(&c, "in_norm.gamma", 1, N, Init::kOne, seed);
  AddParam(&c, "in_norm.beta", 1, N, Init::kZero, seed);
  AddParam(&c, "bottleneck.w", N, F, Init::kFanIn, seed);
  AddParam(&c, "bottleneck.b", 1, F, Init::kZero, seed);
  if (stage_index > 0) {
    AddParam(&c, "fuse_est_norm.gamma", 1, S * N, Init::kOne, seed);
    AddParam(&c, "fuse_est_norm.beta", 1, S * N, Init::kZero, seed);
    AddParam(&c, "fuse_est.w", S * N, F, Init::kFanIn, seed);
    if (spec.identity_aware) AddParam(&c, "fuse_id.w", S * D, F, Init::kFanIn, seed);
  }
  for (size_t b = 0; b < spec.stage_blocks[stage_index]; ++b) {
    for (const char *pass : {"intra", "inter"}) {
      std::string pre = internal::BlockPrefix(b, pass);
      for (const char *dir : {"fwd", "bwd"}) {
        AddParam(&c, pre + "." + dir + ".w_ih", F, 4 * H, Init::kFanIn, seed);
        AddParam(&c, pre + "." + dir + ".w_hh", H, 4 * H, Init::kFanIn, seed);
        AddParam(&c, pre + "." + dir + ".b", 1, 4 * H, Init::kZero, seed);
      }
      AddParam(&c, pre + ".proj.w", 2 * H, F, Init::kFanIn, seed);
      AddParam(&c, pre + ".proj.b", 1, F, Init::kZero, seed);
      AddParam(&c, pre + ".norm.gamma", 1, F, Init::kOne, seed);
      AddParam(&c, pre + ".norm.beta", 1, F, Init::kZero, seed);
    }
  }
  AddParam(&c, "mask.w", F, S * N, Init::kFanIn, seed);
  AddParam(&c, "mask.b", 1, S * N, Init::kZero, seed);
  AddParam(&c, "dec.w", N, L, Init::kFanIn, seed);
  return c;
}

// ID-Net: encoder (no bias), mean pooling, gLN, two feed-forward layers,
// unit normalisation; plus the speaker classifier used to pre-train it.
inline Component MakeIdNet(const ModelSpec &spec, size_t num_classes, uint64_t seed) {
  using internal::AddParam;
  using internal::Init;
  const ModelDims &d = spec.dims;
  const auto N = Eigen::Index(d.enc_basis), L = Eigen::Index(d.kernel), D = Eigen::Index(d.embed),
             Hd = Eigen::Index(d.id_hidden);
  if (num_classes < 2) throw InvalidArgument("ID-Net needs at least 2 speaker classes");
  Component c;
  c.name = "idnet";
  AddParam(&c, "enc.w", L, N, Init::kFanIn, seed);
  AddParam(&c, "pool_norm.gamma", 1, N, Init::kOne, seed);
  AddParam(&c, "pool_norm.beta", 1, N, Init::kZero, seed);
  AddParam(&c, "fc1.w", N, Hd, Init::kFanIn, seed);
  AddParam(&c, "fc1.b", 1, Hd, Init::kZero, seed);
  AddParam(&c, "fc2.w", Hd, D, Init::kFanIn, seed);
  AddParam(&c, "fc2.b", 1, D, Init::kZero, seed);
  AddParam(&c, "classifier.w", D, Eigen::Index(num_classes), Init::kFanIn, seed);
  AddParam(&c, "classifier.b", 1, Eigen::Index(num_classes), Init::kZero, seed);
  return c;
}

inline Model InitModel(const ModelSpec &spec, size_t num_speaker_classes, uint64_t seed) {
  spec.Validate();
  Model m;
  m.spec = spec;
  m.init_seed = seed;
  if (spec.identity_aware) m.idnet = MakeIdNet(spec, num_speaker_classes, seed);
  for (size_t k = 0; k < spec.num_stages(); ++k) m.stages.push_back(MakeStage(spec, k, seed));
  return m;
}

// Copies every same-named, same-shaped parameter of `prev` into `stage`.
// Fusion weights for the new inputs start at zero and blocks beyond the
// previous stage's count get a zero norm gain (their residual branch is then
// exactly zero), so the new stage initially reproduces the previous one.
inline void WarmStartFrom(const Component &prev, Component *stage) {
  for (auto &p : stage->params) {
    if (p.name.rfind("fuse_est.w", 0) == 0 || p.name.rfind("fuse_id.w", 0) == 0) {
      p.value.setZero();
      continue;
    }
    if (prev.Has(p.name)) {
      const auto &q = prev.Get(p.name);
      if (q.value.rows() == p.value.rows() && q.value.cols() == p.value.cols()) {
        p.value = q.value;
        continue;
      }
    }
    if (p.name.size() > 11 && p.name.compare(p.name.size() - 11, 11, ".norm.gamma") == 0) p.value.setZero();
  }
}

// Checks that every component carries the parameters the spec implies.
inline void ValidateModel(const Model &m) {
  m.spec.Validate();
  if (m.stages.size() != m.spec.num_stages()) throw InvalidArgument("spec/params mismatch: stage count");
  if (m.spec.identity_aware != m.idnet.has_value())
    throw InvalidArgument("spec/params mismatch: ID-Net presence");
  auto check = [](const Component &want, const Component &have) {
    if (want.params.size() != have.params.size())
      throw InvalidArgument("spec/params mismatch: " + have.name + " parameter count");
    for (const auto &p : want.params) {
      if (!have.Has(p.name)) throw InvalidArgument("spec/params mismatch: " + have.name + " lacks " + p.name);
      const auto &q = have.Get(p.name);
      if (q.value.rows() != p.value.rows() || q.value.cols() != p.value.cols())
        throw InvalidArgument("spec/params mismatch: " + have.name + "/" + p.name + " shape");
    }
  };
  for (size_t k = 0; k < m.stages.size(); ++k) check(MakeStage(m.spec, k, 0), m.stages[k]);
  if (m.idnet) {
    size_t classes = size_t(m.idnet->Get("classifier.w").value.cols());
    check(MakeIdNet(m.spec, std::max<size_t>(classes, 2), 0), *m.idnet);
  }
}

// ---- differentiable building blocks

// Binds a component's parameters onto a tape, as trainable leaves when
// `trainable` (and a mutable component is given), else as constants.
class ParamBinder {
 public:
  ParamBinder(ad::Tape *tape, const Component &c, Component *mutable_c = nullptr)
      : tape_(tape), c_(&c), mutable_(mutable_c) {}
  ad::Var operator()(const std::string &name) const {
    if (mutable_ && !mutable_->frozen) return tape_->Param(&mutable_->Get(name), true);
    return tape_->Constant(c_->Get(name).value);
  }
  ad::Tape *tape() const { return tape_; }

 private:
  ad::Tape *tape_;
  const Component *c_;
  Component *mutable_;
};

inline size_t LatentFrameCount(size_t samples, size_t kernel) {
  if (samples < kernel) throw InvalidArgument("input shorter than one encoder kernel");
  const size_t hop = kernel / 2;
  return (samples - kernel + hop - 1) / hop + 1;
}

// Encoder: relu(frames * enc.w + enc.b), frames of L samples at stride L/2,
// the tail zero-padded to a whole frame.
inline ad::Var EncodeVar(const ParamBinder &bind, ad::Var wave, size_t kernel, bool with_bias = true) {
  const size_t frames = LatentFrameCount(size_t(wave.rows()), kernel);
  ad::Var x = ad::FrameSignal(wave, Eigen::Index(kernel), Eigen::Index(kernel / 2), Eigen::Index(frames));
  ad::Var y = ad::MatMul(x, bind("enc.w"));
  if (with_bias) y = ad::AddRow(y, bind("enc.b"));
  return ad::Relu(y);
}

inline ad::Var DecodeVar(const ParamBinder &bind, ad::Var latents, size_t kernel, size_t target_len) {
  ad::Var frames = ad::MatMul(latents, bind("dec.w"));
  return ad::OverlapAdd(frames, Eigen::Index(kernel / 2), Eigen::Index(target_len));
}

// Row layout of chunked features: chunk c, position p is row c*K + p and
// reads latent frame c*K/2 + p - K/2 (zero when out of range). Chunks start
// at -K/2 and step by K/2 until every frame lies in exactly two chunks.
struct ChunkLayout {
  size_t frames = 0;
  size_t chunk = 0;
  size_t num_chunks = 0;

  size_t hop() const { return chunk / 2; }

  static ChunkLayout For(size_t frames, size_t chunk) {
    if (chunk < 2 || chunk % 2) throw InvalidArgument("chunk length must be even and >= 2");
    if (frames == 0) throw InvalidArgument("cannot chunk zero frames");
    ChunkLayout l;
    l.frames = frames;
    l.chunk = chunk;
    l.num_chunks = (frames + l.hop() - 1) / l.hop() + 1;
    return l;
  }

  // Source frame of every chunk row, -1 for padding.
  std::vector<int> RowSources() const {
    std::vector<int> idx(num_chunks * chunk);
    for (size_t c = 0; c < num_chunks; ++c)
      for (size_t p = 0; p < chunk; ++p) {
        long f = long(c * hop() + p) - long(hop());
        idx[c * chunk + p] = (f >= 0 && f < long(frames)) ? int(f) : -1;
      }
    return idx;
  }

  void Check() const {
    if (chunk < 2 || chunk % 2 || frames == 0 || num_chunks != (frames + hop() - 1) / hop() + 1)
      throw InvalidArgument("inconsistent chunk metadata");
  }
};

// Chunks as a (num_chunks*K) x features matrix plus layout.
struct Chunks {
  Eigen::MatrixXd data;
  ChunkLayout layout;

  double at(size_t c, size_t p, Eigen::Index f) const { return data(Eigen::Index(c * layout.chunk + p), f); }
};

namespace internal {

// One LSTM direction. steps[t] lists the rows of x batched at time t; the
// output has one H-wide row per row of x.
inline ad::Var LstmDirection(ad::Var x, ad::Var w_ih, ad::Var w_hh, ad::Var b,
                             const std::vector<std::vector<int>> &steps, bool reverse, Eigen::Index H) {
  ad::Var gates_in = ad::AddRow(ad::MatMul(x, w_ih), b);
  std::optional<ad::Var> h, c;
  std::vector<ad::Var> outs;
  std::vector<int> order;
  order.reserve(size_t(x.rows()));
  const size_t T = steps.size();
  for (size_t i = 0; i < T; ++i) {
    const auto &rows = steps[reverse ? T - 1 - i : i];
    ad::Var g = ad::GatherRows(gates_in, rows);
    if (h) g = ad::Add(g, ad::MatMul(*h, w_hh));
    ad::Var in_gate = ad::Sigmoid(ad::SliceCols(g, 0, H));
    ad::Var forget = ad::Sigmoid(ad::SliceCols(g, H, H));
    ad::Var cand = ad::Tanh(ad::SliceCols(g, 2 * H, H));
    ad::Var out_gate = ad::Sigmoid(ad::SliceCols(g, 3 * H, H));
    ad::Var ic = ad::Mul(in_gate, cand);
    c = c ? ad::Add(ad::Mul(forget, *c), ic) : ic;
    h = ad::Mul(out_gate, ad::Tanh(*c));
    outs.push_back(*h);
    order.insert(order.end(), rows.begin(), rows.end());
  }
  std::vector<int> where(size_t(x.rows()), -1);
  for (size_t j = 0; j < order.size(); ++j) where[size_t(order[j])] = int(j);
  return ad::GatherRows(ad::ConcatRows(outs), std::move(where));
}

inline std::vector<std::vector<int>> IntraSteps(const ChunkLayout &l) {
  std::vector<std::vector<int>> steps(l.chunk);
  for (size_t p = 0; p < l.chunk; ++p)
    for (size_t c = 0; c < l.num_chunks; ++c) steps[p].push_back(int(c * l.chunk + p));
  return steps;
}

inline std::vector<std::vector<int>> InterSteps(const ChunkLayout &l) {
  std::vector<std::vector<int>> steps(l.num_chunks);
  for (size_t c = 0; c < l.num_chunks; ++c)
    for (size_t p = 0; p < l.chunk; ++p) steps[c].push_back(int(c * l.chunk + p));
  return steps;
}

}  // namespace internal

// x + gLN(proj(BiLSTM(x))) along positions within each chunk, then the same
// along chunks for each position.
inline ad::Var DualPathBlockVar(const ParamBinder &bind, ad::Var x, const ChunkLayout &layout, size_t block,
                                size_t hidden) {
  const auto H = Eigen::Index(hidden);
  for (const char *pass : {"intra", "inter"}) {
    const std::string pre = internal::BlockPrefix(block, pass);
    const auto steps = std::string(pass) == "intra" ? internal::IntraSteps(layout) : internal::InterSteps(layout);
    ad::Var fwd = internal::LstmDirection(x, bind(pre + ".fwd.w_ih"), bind(pre + ".fwd.w_hh"),
                                          bind(pre + ".fwd.b"), steps, false, H);
    ad::Var bwd = internal::LstmDirection(x, bind(pre + ".bwd.w_ih"), bind(pre + ".bwd.w_hh"),
                                          bind(pre + ".bwd.b"), steps, true, H);
    ad::Var y = ad::AddRow(ad::MatMul(ad::ConcatCols({fwd, bwd}), bind(pre + ".proj.w")), bind(pre + ".proj.b"));
    y = ad::GlobalLayerNorm(y, bind(pre + ".norm.gamma"), bind(pre + ".norm.beta"));
    x = ad::Add(x, y);
  }
  if (!x.value().allFinite())
    throw NumericError("non-finite activation in dual-path block " + std::to_string(block));
  return x;
}

// Unit-norm speaker embedding (1 x D).
inline ad::Var IdEmbedVar(const ParamBinder &bind, ad::Var wave, const ModelSpec &spec) {
  ad::Var feats = EncodeVar(bind, wave, spec.dims.kernel, /*with_bias=*/false);
  ad::Var pooled = ad::GlobalLayerNorm(ad::MeanRows(feats), bind("pool_norm.gamma"), bind("pool_norm.beta"));
  ad::Var h = ad::Relu(ad::AddRow(ad::MatMul(pooled, bind("fc1.w")), bind("fc1.b")));
  ad::Var e = ad::AddRow(ad::MatMul(h, bind("fc2.w")), bind("fc2.b"));
  return ad::L2NormalizeRows(e);
}

inline ad::Var SpeakerLogitsVar(const ParamBinder &bind, ad::Var embedding) {
  return ad::AddRow(ad::MatMul(embedding, bind("classifier.w")), bind("classifier.b"));
}

struct StageVars {
  ad::Var mixture_latents;
  std::vector<ad::Var> latents;  // S masked latents, frames x N
  std::vector<ad::Var> waves;    // S estimates, T x 1
};

// One stage. `prev` and `prev_embeddings` feed the refinement input of
// stages after the first; embeddings are empty for non-identity specs.
inline StageVars StageForwardVar(const ParamBinder &bind, const ModelSpec &spec, size_t stage_index,
                                 ad::Var mixture, const StageVars *prev,
                                 const std::vector<ad::Var> &prev_embeddings) {
  const ModelDims &d = spec.dims;
  const auto N = Eigen::Index(d.enc_basis), S = Eigen::Index(spec.num_sources);
  const size_t T = size_t(mixture.rows());

  StageVars out;
  out.mixture_latents = EncodeVar(bind, mixture, d.kernel);
  const ad::Var &E = out.mixture_latents;
  const Eigen::Index frames = E.rows();

  ad::Var z = ad::MatMul(ad::GlobalLayerNorm(E, bind("in_norm.gamma"), bind("in_norm.beta")), bind("bottleneck.w"));
  if (stage_index > 0) {
    if (!prev) throw InvalidArgument("refinement stage needs the previous stage's output");
    ad::Var est = ad::GlobalLayerNorm(ad::ConcatCols(prev->latents), bind("fuse_est_norm.gamma"),
                                      bind("fuse_est_norm.beta"));
    z = ad::Add(z, ad::MatMul(est, bind("fuse_est.w")));
    if (spec.identity_aware) {
      if (prev_embeddings.size() != size_t(S)) throw InvalidArgument("refinement stage needs S embeddings");
      ad::Var emb = ad::BroadcastRows(ad::ConcatCols(prev_embeddings), frames);
      z = ad::Add(z, ad::MatMul(emb, bind("fuse_id.w")));
    }
  }
  z = ad::AddRow(z, bind("bottleneck.b"));

  const ChunkLayout layout = ChunkLayout::For(size_t(frames), d.chunk);
  const std::vector<int> rows = layout.RowSources();
  ad::Var chunks = ad::GatherRows(z, rows);
  for (size_t b = 0; b < spec.stage_blocks[stage_index]; ++b)
    chunks = DualPathBlockVar(bind, chunks, layout, b, d.hidden);
  ad::Var merged = ad::ScatterRowsMean(chunks, rows, frames);

  ad::Var masks = ad::Sigmoid(ad::AddRow(ad::MatMul(merged, bind("mask.w")), bind("mask.b")));
  for (Eigen::Index s = 0; s < S; ++s) {
    ad::Var lat = ad::Mul(ad::SliceCols(masks, s * N, N), E);
    out.latents.push_back(lat);
    out.waves.push_back(DecodeVar(bind, lat, d.kernel, T));
  }
  return out;
}

inline ad::Var WaveVar(ad::Tape *tape, const Waveform &w) {
  return tape->Constant(Eigen::Map<const Eigen::VectorXd>(w.samples.data(), Eigen::Index(w.size())));
}

inline Waveform ToWaveform(const ad::Var &v, int sample_rate) {
  const auto &m = v.value();
  return Waveform(std::vector<double>(m.data(), m.data() + m.size()), sample_rate);
}

// Runs stages 1..upto (all when upto == 0). When `trainable_model` is the
// model itself, its components named in `trainable` (and not frozen) become
// trainable leaves; everything else is bound as constants.
inline std::vector<StageVars> ForwardStagesVar(ad::Tape *tape, const Model &model, ad::Var mixture,
                                               Model *trainable_model = nullptr,
                                               const std::set<std::string> &trainable = {}, size_t upto = 0) {
  if (trainable_model && trainable_model != &model) throw InvalidArgument("trainable model must be the model");
  const ModelSpec &spec = model.spec;
  if (upto == 0) upto = spec.num_stages();
  auto binder = [&](const Component &c, Component *mc) {
    return (trainable_model && trainable.count(c.name)) ? ParamBinder(tape, c, mc) : ParamBinder(tape, c);
  };
  std::vector<StageVars> out;
  for (size_t k = 0; k < upto; ++k) {
    std::vector<ad::Var> embeddings;
    if (k > 0 && spec.identity_aware) {
      ParamBinder idb = binder(*model.idnet, trainable_model ? &*trainable_model->idnet : nullptr);
      for (const auto &w : out.back().waves) embeddings.push_back(IdEmbedVar(idb, w, spec));
    }
    ParamBinder sb = binder(model.stages[k], trainable_model ? &trainable_model->stages[k] : nullptr);
    out.push_back(StageForwardVar(sb, spec, k, mixture, k ? &out.back() : nullptr, embeddings));
  }
  return out;
}

// ---- plain (non-differentiable) entry points

using LatentFrames = Eigen::MatrixXd;

inline LatentFrames Encode(const Waveform &w, const Component &stage, const ModelSpec &spec) {
  ad::Tape tape(false);
  return EncodeVar(ParamBinder(&tape, stage), WaveVar(&tape, w), spec.dims.kernel).value();
}

inline Waveform Decode(const LatentFrames &frames, const Component &stage, const ModelSpec &spec,
                       size_t target_len) {
  if (!frames.allFinite()) throw NumericError("decode: non-finite latent frames");
  ad::Tape tape(false);
  ad::Var v = DecodeVar(ParamBinder(&tape, stage), tape.Constant(frames), spec.dims.kernel, target_len);
  return ToWaveform(v, spec.sample_rate);
}

inline Chunks ChunkSegment(const Eigen::MatrixXd &x, size_t chunk) {
  Chunks c;
  c.layout = ChunkLayout::For(size_t(x.rows()), chunk);
  ad::Tape tape(false);
  c.data = ad::GatherRows(tape.Constant(x), c.layout.RowSources()).value();
  return c;
}

inline Eigen::MatrixXd ChunkMerge(const Chunks &c) {
  c.layout.Check();
  if (c.data.rows() != Eigen::Index(c.layout.num_chunks * c.layout.chunk))
    throw InvalidArgument("inconsistent chunk metadata");
  ad::Tape tape(false);
  return ad::ScatterRowsMean(tape.Constant(c.data), c.layout.RowSources(), Eigen::Index(c.layout.frames)).value();
}

inline Chunks DualPathBlock(const Chunks &in, const Component &stage, size_t block, size_t hidden) {
  ad::Tape tape(false);
  Chunks out = in;
  out.data = DualPathBlockVar(ParamBinder(&tape, stage), tape.Constant(in.data), in.layout, block, hidden).value();
  return out;
}

struct SpeakerEmbedding {
  Eigen::RowVectorXd vector;
  std::string source_id;
};

inline SpeakerEmbedding IdEmbed(const Waveform &w, const Component &idnet, const ModelSpec &spec,
                                const std::string &source_id = "") {
  ad::Tape tape(false);
  ad::Var e = IdEmbedVar(ParamBinder(&tape, idnet), WaveVar(&tape, w), spec);
  return {e.value().row(0), source_id};
}

// stages[k][s]: estimate of source s after stage k+1.
struct StageOutput {
  std::vector<std::vector<Waveform>> stages;
};

inline StageOutput Separate(const Waveform &mixture, const Model &model) {
  ValidateModel(model);
  ad::Tape tape(false);
  auto vars = ForwardStagesVar(&tape, model, WaveVar(&tape, mixture));
  StageOutput out;
  for (const auto &sv : vars) {
    std::vector<Waveform> ws;
    for (const auto &w : sv.waves) ws.push_back(ToWaveform(w, mixture.sample_rate));
    out.stages.push_back(std::move(ws));
  }
  return out;
}

}  // namespace tastas
