// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Multi-step training: ID-Net first, then each separation stage in turn,
// every finished component frozen before the next step starts. Also the
// utterance-level PIT SI-SDR loss, the identity-consistency loss, Adam,
// early stopping, and the naive joint-training diagnostic.

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tastas/checkpoint.hpp"
#include "tastas/config.hpp"
#include "tastas/mixgen.hpp"
#include "tastas/model.hpp"
#include "tastas/sepmetrics.hpp"

namespace tastas {

// ---- losses

struct UpitLoss {
  double loss = 0.0;
  std::vector<size_t> perm;  // estimate -> reference
};

// Negative mean SI-SDR under the PIT-optimal pairing. grad (optional)
// receives d loss / d estimate_i with the pairing held fixed.
inline UpitLoss LossUpitSiSdr(const std::vector<Waveform> &est, const std::vector<Waveform> &refs,
                              std::vector<std::vector<double>> *grad = nullptr) {
  const size_t S = refs.size();
  if (est.size() != S || S == 0) throw InvalidArgument("upit loss: estimate/reference count mismatch");
  for (size_t i = 0; i < S; ++i)
    if (est[i].size() != refs[0].size() || refs[i].size() != refs[0].size())
      throw InvalidArgument("upit loss: length mismatch");
  PermutationAssignment a = PitAssign(SiSdrMatrix(est, refs), PitMethod::kHungarian);
  UpitLoss out;
  out.perm = a.perm;
  out.loss = -a.objective / double(S);
  if (grad) {
    grad->assign(S, {});
    for (size_t i = 0; i < S; ++i) {
      SiSdr(est[i].samples, refs[a.perm[i]].samples, &(*grad)[i]);
      for (double &g : (*grad)[i]) g *= -1.0 / double(S);
    }
  }
  return out;
}

// Tape version: the estimates are stage outputs (T x 1 each).
inline ad::Var UpitLossVar(const std::vector<ad::Var> &est, const std::vector<Waveform> &refs,
                           std::vector<size_t> *perm = nullptr) {
  ad::Var cat = ad::ConcatCols(est);
  const ad::Mat &v = cat.value();
  std::vector<Waveform> ew;
  for (Eigen::Index s = 0; s < v.cols(); ++s)
    ew.emplace_back(std::vector<double>(v.col(s).data(), v.col(s).data() + v.rows()));
  std::vector<std::vector<double>> g;
  UpitLoss l = LossUpitSiSdr(ew, refs, cat.requires_grad() ? &g : nullptr);
  if (perm) *perm = l.perm;
  ad::Mat gm = ad::Mat::Zero(v.rows(), v.cols());
  for (size_t s = 0; s < g.size(); ++s)
    gm.col(Eigen::Index(s)) = Eigen::Map<const Eigen::VectorXd>(g[s].data(), v.rows());
  return ad::ScalarWithGrad(cat, l.loss, std::move(gm));
}

// 1 - mean cosine between the embedding of each estimate and of the
// reference it is paired with. `idb` must bind the ID-Net as constants.
inline ad::Var IdentityLossVar(const ParamBinder &idb, const std::vector<ad::Var> &est,
                               const std::vector<Waveform> &refs, const std::vector<size_t> &perm,
                               const ModelSpec &spec) {
  const size_t S = refs.size();
  if (est.size() != S || perm.size() != S) throw InvalidArgument("identity loss: count mismatch");
  ad::Tape *t = idb.tape();
  std::vector<ad::Var> dots;
  for (size_t i = 0; i < S; ++i) {
    ad::Var e = IdEmbedVar(idb, est[i], spec);
    ad::Var r = IdEmbedVar(idb, WaveVar(t, refs[perm[i]]), spec);
    dots.push_back(ad::Sum(ad::Mul(e, r)));
  }
  ad::Var mean_cos = ad::Scale(ad::Sum(ad::ConcatCols(dots)), 1.0 / double(S));
  return ad::Sub(t->Constant(ad::Mat::Ones(1, 1)), mean_cos);
}

inline double LossIdentityConsistency(const std::vector<Waveform> &est, const std::vector<Waveform> &refs,
                                      const std::vector<size_t> &perm, const Model &model) {
  if (!model.idnet) throw InvalidArgument("identity loss needs an ID-Net");
  if (!model.idnet->frozen) throw FreezeError("identity loss requires a frozen ID-Net");
  ad::Tape tape(false);
  std::vector<ad::Var> ev;
  for (const auto &w : est) ev.push_back(WaveVar(&tape, w));
  return IdentityLossVar(ParamBinder(&tape, *model.idnet), ev, refs, perm, model.spec).value()(0, 0);
}

// ---- optimiser

class Adam {
 public:
  Adam(std::vector<ad::Parameter *> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : lr(lr), params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto *p : params_) {
      m_.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(m_.back());
    }
  }

  void ZeroGrad() {
    for (auto *p : params_) p->ZeroGrad();
  }

  // Rescales the gradients to global norm <= clip_norm, then updates.
  // Returns the norm before clipping.
  double Step(double clip_norm) {
    double sq = 0.0;
    for (auto *p : params_) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient");
    const double scale = norm > clip_norm ? clip_norm / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_)), c2 = 1.0 - std::pow(b2_, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      ad::Mat g = params_[i]->grad * scale;
      m_[i] = b1_ * m_[i] + (1 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1 - b2_) * g.cwiseAbs2();
      params_[i]->value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
    return norm;
  }

  double lr;

 private:
  std::vector<ad::Parameter *> params_;
  std::vector<ad::Mat> m_, v_;
  double b1_, b2_, eps_;
  uint64_t t_ = 0;
};

// ---- data

struct TrainData {
  Corpus corpus;
  Manifest train, valid;

  size_t num_sources() const { return train.num_sources; }

  static TrainData Load(const std::string &dir) {
    TrainData d;
    d.train = ReadManifest(dir + "/train.jsonl");
    d.valid = ReadManifest(dir + "/valid.jsonl");
    if (d.train.records.empty() || d.valid.records.empty()) throw InvalidArgument("empty train/valid manifest");
    if (d.train.corpus_id != d.valid.corpus_id) throw InvalidArgument("train/valid manifests use different corpora");
    if (d.train.num_sources != d.valid.num_sources) throw InvalidArgument("train/valid source counts differ");
    d.corpus = ResolveCorpus(d.train.corpus_id);
    return d;
  }
};

// Same window of the mixture and every source: a seeded crop when random
// and long enough, else the head (zero-padded if short).
inline Mixture CropMixture(const Mixture &m, size_t n, bool random, uint64_t seed) {
  FixMode mode = (random && m.mixture.size() > n) ? FixMode::kRandomCrop : FixMode::kPadZeros;
  Mixture out;
  out.mixture = FixLength(m.mixture, n, mode, seed);
  for (const auto &s : m.sources) out.sources.push_back(FixLength(s, n, mode, seed));
  return out;
}

inline std::vector<Mixture> SynthesizeAll(const Manifest &m, const Corpus &c) {
  std::vector<Mixture> out;
  out.reserve(m.records.size());
  for (const auto &r : m.records) out.push_back(Synthesize(r, c));
  return out;
}

// ---- training loop plumbing

struct EpochRecord {
  size_t epoch = 0;
  double train_loss = 0.0, valid_loss = 0.0;
};

struct StepResult {
  std::string step;
  std::vector<EpochRecord> trace;
  double initial_valid_loss = 0.0;  // before the first update
  double best_valid_loss = 0.0;
  size_t best_epoch = 0;  // 0: the initial weights were never beaten
  double accuracy = std::numeric_limits<double>::quiet_NaN();  // ID-Net only
};

inline nlohmann::json StepResultToJson(const StepResult &r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["initial_valid_loss"] = r.initial_valid_loss;
  j["best_valid_loss"] = r.best_valid_loss;
  j["best_epoch"] = r.best_epoch;
  if (std::isfinite(r.accuracy)) j["accuracy"] = r.accuracy;
  j["trace"] = nlohmann::json::array();
  for (const auto &e : r.trace) j["trace"].push_back({e.epoch, e.train_loss, e.valid_loss});
  return j;
}

inline StepResult StepResultFromJson(const nlohmann::json &j) {
  StepResult r;
  r.step = j.at("step");
  r.initial_valid_loss = j.at("initial_valid_loss");
  r.best_valid_loss = j.at("best_valid_loss");
  r.best_epoch = j.at("best_epoch");
  if (j.contains("accuracy")) r.accuracy = j["accuracy"];
  for (const auto &e : j.at("trace")) r.trace.push_back({e.at(0), e.at(1), e.at(2)});
  return r;
}

inline std::string FormatLoss(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline void WriteTraceCsv(const std::string &path, const std::vector<StepResult> &steps) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write trace: " + path);
  os << "epoch,train_loss,valid_loss,step\n";
  for (const auto &s : steps)
    for (const auto &e : s.trace)
      os << e.epoch << "," << FormatLoss(e.train_loss) << "," << FormatLoss(e.valid_loss) << "," << s.step << "\n";
}

struct TrainHooks {
  std::function<void(const std::string &)> log;
  // Called before each epoch; may throw to abort the run.
  std::function<void(const std::string &step, size_t epoch)> before_epoch;

  void Log(const std::string &s) const {
    if (log) log(s);
  }
};

// Early stopping: an epoch counts as progress when validation loss drops by
// more than `tolerance` below the best so far; otherwise the step size is
// decayed, and `patience` such epochs in a row end the step. The weights
// with the lowest validation loss (the initial ones included) are restored.
inline StepResult RunEpochs(const std::string &step, const std::vector<ad::Parameter *> &params,
                            const TrainConfig &cfg, const TrainHooks &hooks,
                            const std::function<double(size_t, Adam &)> &train_epoch,
                            const std::function<double()> &valid_loss) {
  StepResult r;
  r.step = step;
  Adam opt(params, cfg.lr);
  auto snapshot = [&] {
    std::vector<ad::Mat> v;
    for (auto *p : params) v.push_back(p->value);
    return v;
  };
  r.initial_valid_loss = r.best_valid_loss = valid_loss();
  std::vector<ad::Mat> best = snapshot();
  hooks.Log(step + " epoch 0 valid " + FormatLoss(r.initial_valid_loss));
  size_t stale = 0;
  for (size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (hooks.before_epoch) hooks.before_epoch(step, epoch);
    double tr = train_epoch(epoch, opt);
    double va = valid_loss();
    if (!std::isfinite(tr) || !std::isfinite(va)) throw NumericError(step + ": non-finite loss");
    r.trace.push_back({epoch, tr, va});
    const bool progress = va < r.best_valid_loss - cfg.tolerance;
    if (va < r.best_valid_loss) {
      r.best_valid_loss = va;
      r.best_epoch = epoch;
      best = snapshot();
    }
    hooks.Log(step + " epoch " + std::to_string(epoch) + " train " + FormatLoss(tr) + " valid " + FormatLoss(va) +
              " lr " + FormatLoss(opt.lr));
    if (progress) {
      stale = 0;
    } else {
      opt.lr *= cfg.lr_decay;
      if (++stale >= cfg.patience) break;
    }
  }
  for (size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return r;
}

inline std::vector<ad::Parameter *> ParamPointers(Component *c) {
  std::vector<ad::Parameter *> v;
  for (auto &p : c->params) v.push_back(&p);
  return v;
}

inline uint64_t StepSeed(uint64_t seed, const std::string &step, size_t epoch, size_t index) {
  return Rng::Derive(seed, internal::NameHash(step) + epoch * 1000003ULL + index).NextU64();
}

// ---- step 1: ID-Net

struct IdNetData {
  std::vector<std::string> classes;  // training speakers, label = index
  std::vector<Waveform> train, valid;
  std::vector<int> train_labels, valid_labels;
};

// Clean single-speaker segments. Training utterances are those the train
// manifest uses; validation uses the valid manifest's other utterances of
// the same speakers, or every fifth training utterance when there are none.
inline IdNetData BuildIdNetData(const TrainData &d, size_t segment) {
  if (d.train.records.empty()) throw InvalidArgument("ID-Net training needs a non-empty manifest");
  IdNetData out;
  for (const auto &s : ManifestSpeakers(d.train)) out.classes.push_back(s);
  if (out.classes.size() < 2) throw InvalidArgument("ID-Net training needs at least 2 speakers");
  std::map<std::string, int> label;
  for (size_t i = 0; i < out.classes.size(); ++i) label[out.classes[i]] = int(i);

  auto speaker_of = [&](const std::string &key) { return d.corpus.speakers[d.corpus.Find(key).speaker]; };
  std::set<std::string> train_utts, valid_utts;
  for (const auto &r : d.train.records) train_utts.insert(r.source_refs.begin(), r.source_refs.end());
  for (const auto &r : d.valid.records)
    for (const auto &k : r.source_refs)
      if (!train_utts.count(k) && label.count(speaker_of(k))) valid_utts.insert(k);
  if (valid_utts.empty()) {
    std::map<std::string, size_t> seen;
    for (const auto &k : train_utts)
      if (seen[speaker_of(k)]++ % 5 == 4) valid_utts.insert(k);
    for (const auto &k : valid_utts) train_utts.erase(k);
  }
  auto add = [&](const std::set<std::string> &keys, std::vector<Waveform> *w, std::vector<int> *l) {
    for (const auto &k : keys) {
      const Waveform &a = d.corpus.Find(k).audio;
      size_t count = std::max<size_t>(1, a.size() / segment);
      for (size_t i = 0; i < count; ++i) {
        Waveform seg(std::vector<double>(a.samples.begin() + long(std::min(a.size(), i * segment)),
                                         a.samples.begin() + long(std::min(a.size(), (i + 1) * segment))),
                     a.sample_rate);
        w->push_back(FixLength(seg, segment, FixMode::kPadZeros));
        l->push_back(label.at(speaker_of(k)));
      }
    }
  };
  add(train_utts, &out.train, &out.train_labels);
  add(valid_utts, &out.valid, &out.valid_labels);
  if (out.valid.empty()) throw InvalidArgument("no held-out utterances for ID-Net validation");
  return out;
}

inline ad::Var IdNetLogits(const ParamBinder &bind, const std::vector<Waveform> &segs,
                           const std::vector<size_t> &which, const ModelSpec &spec) {
  std::vector<ad::Var> rows;
  for (size_t i : which) rows.push_back(SpeakerLogitsVar(bind, IdEmbedVar(bind, WaveVar(bind.tape(), segs[i]), spec)));
  return ad::ConcatRows(rows);
}

inline double IdNetAccuracy(const Model &model, const IdNetData &data) {
  ad::Tape tape(false);
  std::vector<size_t> all(data.valid.size());
  std::iota(all.begin(), all.end(), 0);
  ad::Mat logits = IdNetLogits(ParamBinder(&tape, *model.idnet), data.valid, all, model.spec).value();
  size_t hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    hits += int(arg) == data.valid_labels[size_t(i)];
  }
  return double(hits) / double(logits.rows());
}

// Speaker classification with cross-entropy; the ID-Net is frozen on return.
inline StepResult TrainIdNet(Model *model, const IdNetData &data, const TrainConfig &cfg,
                             const TrainHooks &hooks = {}) {
  if (!model->idnet) throw InvalidArgument("model has no ID-Net");
  if (model->idnet->frozen) throw FreezeError("ID-Net is already frozen");
  if (data.classes.size() < 2) throw InvalidArgument("ID-Net training needs at least 2 speakers");
  if (data.train.empty()) throw InvalidArgument("ID-Net training needs a non-empty manifest");
  Component &idnet = *model->idnet;
  if (size_t(idnet.Get("classifier.w").value.cols()) != data.classes.size())
    throw InvalidArgument("ID-Net classifier size does not match the training speakers");
  const ModelSpec &spec = model->spec;

  auto train_epoch = [&](size_t epoch, Adam &opt) {
    std::vector<size_t> order = Rng::Derive(cfg.seed, internal::NameHash("idnet") + epoch).Permutation(data.train.size());
    double total = 0.0;
    for (size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<size_t> idx(order.begin() + long(b), order.begin() + long(std::min(order.size(), b + cfg.batch_size)));
      std::vector<int> labels;
      for (size_t i : idx) labels.push_back(data.train_labels[i]);
      opt.ZeroGrad();
      ad::Tape tape;
      ad::Var loss = ad::SoftmaxCrossEntropy(IdNetLogits(ParamBinder(&tape, idnet, &idnet), data.train, idx, spec), labels);
      tape.Backward(loss);
      opt.Step(cfg.clip_norm);
      total += loss.value()(0, 0) * double(idx.size());
    }
    return total / double(order.size());
  };
  auto valid_loss = [&] {
    ad::Tape tape(false);
    std::vector<size_t> all(data.valid.size());
    std::iota(all.begin(), all.end(), 0);
    return ad::SoftmaxCrossEntropy(IdNetLogits(ParamBinder(&tape, idnet), data.valid, all, spec), data.valid_labels)
        .value()(0, 0);
  };
  StepResult r = RunEpochs("idnet", ParamPointers(&idnet), cfg, hooks, train_epoch, valid_loss);
  r.accuracy = IdNetAccuracy(*model, data);
  idnet.frozen = true;
  idnet.trained_by = "idnet";
  hooks.Log("idnet held-out accuracy " + FormatLoss(r.accuracy));
  return r;
}

// ---- steps 2..n+1: separation stages

struct SeparationLoss {
  ad::Var total;
  std::vector<size_t> perm;
};

// Loss on the outputs of stage `k`. With a trainable model, the components
// named in `trainable` receive gradients; the identity term always sees the
// ID-Net as constants.
inline SeparationLoss StageLoss(ad::Tape *tape, const Model &model, size_t k, const Mixture &mix,
                                double lambda_id, Model *trainable_model = nullptr,
                                const std::set<std::string> &trainable = {}) {
  auto stages = ForwardStagesVar(tape, model, WaveVar(tape, mix.mixture), trainable_model, trainable, k + 1);
  SeparationLoss out;
  out.total = UpitLossVar(stages[k].waves, mix.sources, &out.perm);
  if (model.spec.identity_aware && lambda_id > 0) {
    ad::Var id = IdentityLossVar(ParamBinder(tape, *model.idnet), stages[k].waves, mix.sources, out.perm, model.spec);
    out.total = ad::Add(out.total, ad::Scale(id, lambda_id));
  }
  return out;
}

// Shared epoch/validation closures for stage and naive training.
struct SeparationTask {
  const Model *model;
  Model *mutable_model;
  size_t stage;  // supervised stage
  std::set<std::string> trainable;
  std::string step;
  const TrainConfig *cfg;
  std::vector<Mixture> train, valid;  // valid already cropped
  RemixOptions remix;

  double TrainEpoch(size_t epoch, Adam &opt) const {
    std::vector<size_t> order = Rng::Derive(cfg->seed, internal::NameHash(step) + epoch).Permutation(train.size());
    double total = 0.0;
    size_t count = 0;
    for (size_t b = 0; b < order.size(); b += cfg->batch_size) {
      std::vector<Mixture> batch;
      for (size_t i = b; i < std::min(order.size(), b + cfg->batch_size); ++i)
        batch.push_back(CropMixture(train[order[i]], cfg->segment, true, StepSeed(cfg->seed, step, epoch, i)));
      if (cfg->online_remix) batch = OnlineRemix(batch, StepSeed(cfg->seed, step + "/remix", epoch, b), remix);
      opt.ZeroGrad();
      for (const auto &m : batch) {
        ad::Tape tape;
        SeparationLoss l = StageLoss(&tape, *model, stage, m, cfg->lambda_id, mutable_model, trainable);
        tape.Backward(ad::Scale(l.total, 1.0 / double(batch.size())));
        total += l.total.value()(0, 0);
        ++count;
      }
      opt.Step(cfg->clip_norm);
    }
    return total / double(count);
  }

  double ValidLoss() const {
    double total = 0.0;
    for (const auto &m : valid) {
      ad::Tape tape(false);
      total += StageLoss(&tape, *model, stage, m, cfg->lambda_id).total.value()(0, 0);
    }
    return total / double(valid.size());
  }
};

inline SeparationTask MakeSeparationTask(Model *model, size_t stage, std::set<std::string> trainable,
                                         const std::string &step, const TrainData &data, const TrainConfig &cfg) {
  if (data.num_sources() != model->spec.num_sources) throw InvalidArgument("manifest/model source count mismatch");
  SeparationTask t{model, model, stage, std::move(trainable), step, &cfg, SynthesizeAll(data.train, data.corpus), {}, {}};
  for (const auto &m : SynthesizeAll(data.valid, data.corpus)) t.valid.push_back(CropMixture(m, cfg.segment, false, 0));
  t.remix.snr_low_db = data.train.snr_low_db;
  t.remix.snr_high_db = data.train.snr_high_db;
  return t;
}

inline std::map<std::string, std::string> FrozenDigests(const Model &m) {
  std::map<std::string, std::string> d;
  if (m.idnet && m.idnet->frozen) d[m.idnet->name] = ComponentDigest(*m.idnet);
  for (const auto &s : m.stages)
    if (s.frozen) d[s.name] = ComponentDigest(s);
  return d;
}

inline void CheckDigests(const Model &m, const std::map<std::string, std::string> &expect) {
  auto now = FrozenDigests(m);
  for (const auto &[name, digest] : expect) {
    auto it = now.find(name);
    if (it == now.end() || it->second != digest)
      throw FreezeError("digest mismatch for frozen component " + name);
  }
}

// Trains stage k (0-based) alone; earlier stages and the ID-Net must be
// frozen. Stages after the first start as a copy of the previous stage.
inline StepResult TrainStage(Model *model, size_t k, const TrainData &data, const TrainConfig &cfg,
                             const TrainHooks &hooks = {}) {
  ValidateModel(*model);
  if (k >= model->stages.size()) throw InvalidArgument("no stage " + std::to_string(k + 1));
  if (model->spec.identity_aware && !model->idnet->frozen)
    throw FreezeError("stage training requires a frozen ID-Net");
  for (size_t j = 0; j < k; ++j)
    if (!model->stages[j].frozen) throw FreezeError(model->stages[j].name + " must be frozen before training " +
                                                    model->stages[k].name);
  Component &stage = model->stages[k];
  if (stage.frozen) throw FreezeError(stage.name + " is already frozen");
  const auto digests = FrozenDigests(*model);

  if (k > 0) WarmStartFrom(model->stages[k - 1], &stage);
  SeparationTask task = MakeSeparationTask(model, k, {stage.name}, stage.name, data, cfg);
  StepResult r = RunEpochs(
      stage.name, ParamPointers(&stage), cfg, hooks, [&](size_t e, Adam &opt) { return task.TrainEpoch(e, opt); },
      [&] { return task.ValidLoss(); });

  CheckDigests(*model, digests);
  stage.frozen = true;
  stage.trained_by = stage.name;
  return r;
}

// ---- orchestration

inline ModelSpec SpecFromConfig(const TrainConfig &cfg, size_t num_sources, int sample_rate) {
  ModelSpec spec = ParseModelSpec(cfg.model_spec);
  spec.num_sources = num_sources;
  spec.dims = cfg.dims;
  spec.sample_rate = sample_rate;
  spec.Validate();
  return spec;
}

inline std::vector<std::string> PipelineSteps(const ModelSpec &spec) {
  std::vector<std::string> steps;
  if (spec.identity_aware) steps.push_back("idnet");
  for (size_t k = 0; k < spec.num_stages(); ++k) steps.push_back(StageName(k));
  return steps;
}

inline std::string StepCheckpointName(size_t index, const std::string &step) {
  return "step" + std::to_string(index + 1) + "_" + step + ".ckpt";
}

struct MultistepResult {
  Checkpoint final;
  std::vector<StepResult> steps;
  std::vector<std::string> checkpoints;  // one per step, in order
  std::vector<std::string> executed;     // steps run by this call (not resumed)
};

inline int SampleRateOf(const TrainData &data) {
  return data.corpus.utterances.empty() ? kDefaultSampleRate : data.corpus.utterances[0].audio.sample_rate;
}

inline void CheckResumable(const Checkpoint &ck, const ModelSpec &spec, const TrainConfig &cfg) {
  const ModelSpec &have = ck.model.spec;
  if (have.Text() != spec.Text() || have.num_sources != spec.num_sources ||
      DimsToJson(have.dims) != DimsToJson(spec.dims) || ck.model.init_seed != cfg.seed)
    throw InvalidArgument("resume: checkpoint does not match the configuration");
}

// Runs every pipeline step in order, persisting a checkpoint after each.
// With `resume`, continues after the last step whose checkpoint exists.
inline MultistepResult RunMultistep(const TrainConfig &cfg, bool resume, const TrainHooks &hooks = {}) {
  cfg.Validate();
  if (cfg.out_dir.empty()) throw InvalidArgument("out_dir is required");
  TrainData data = TrainData::Load(cfg.data_dir);
  const ModelSpec spec = SpecFromConfig(cfg, data.num_sources(), SampleRateOf(data));
  const auto steps = PipelineSteps(spec);
  std::filesystem::create_directories(cfg.out_dir);

  MultistepResult res;
  for (size_t i = 0; i < steps.size(); ++i) res.checkpoints.push_back(cfg.out_dir + "/" + StepCheckpointName(i, steps[i]));

  size_t start = 0;
  Checkpoint ck;
  if (resume) {
    for (size_t i = steps.size(); i-- > 0;)
      if (std::filesystem::exists(res.checkpoints[i])) {
        ck = LoadCheckpoint(res.checkpoints[i]);
        CheckResumable(ck, spec, cfg);
        start = i + 1;
        for (const auto &j : ck.meta.at("step_results")) res.steps.push_back(StepResultFromJson(j));
        CheckDigests(ck.model, ck.meta.at("digests").get<std::map<std::string, std::string>>());
        hooks.Log("resuming after step " + steps[i]);
        break;
      }
  }
  std::unique_ptr<IdNetData> id_data;
  if (start == 0) {
    size_t classes = 2;
    if (spec.identity_aware) {
      id_data = std::make_unique<IdNetData>(BuildIdNetData(data, cfg.segment));
      classes = id_data->classes.size();
    }
    ck.model = InitModel(spec, classes, cfg.seed);
  }
  Model &model = ck.model;

  for (size_t i = start; i < steps.size(); ++i) {
    const std::string &step = steps[i];
    hooks.Log("step " + std::to_string(i + 1) + "/" + std::to_string(steps.size()) + ": " + step);
    StepResult r;
    if (step == "idnet") {
      if (!id_data) id_data = std::make_unique<IdNetData>(BuildIdNetData(data, cfg.segment));
      r = TrainIdNet(&model, *id_data, cfg, hooks);
    } else {
      r = TrainStage(&model, i - (spec.identity_aware ? 1 : 0), data, cfg, hooks);
    }
    res.steps.push_back(r);
    res.executed.push_back(step);

    nlohmann::json results = nlohmann::json::array();
    for (const auto &s : res.steps) results.push_back(StepResultToJson(s));
    ck.meta = nlohmann::json::object();
    ck.meta["completed_steps"] = std::vector<std::string>(steps.begin(), steps.begin() + long(i + 1));
    ck.meta["next_step"] = i + 1 < steps.size() ? steps[i + 1] : "done";
    ck.meta["digests"] = FrozenDigests(model);
    ck.meta["step_results"] = results;
    ck.meta["config"] = ConfigToText(cfg);
    SaveCheckpoint(res.checkpoints[i], ck);
    WriteTraceCsv(cfg.out_dir + "/trace.csv", res.steps);
  }
  std::filesystem::copy_file(res.checkpoints.back(), cfg.out_dir + "/model.ckpt",
                             std::filesystem::copy_options::overwrite_existing);
  res.final = ck;
  return res;
}

// Every component trained together from scratch against the final-stage
// loss. Writes naive.ckpt and trace_naive.csv into out_dir.
inline std::pair<Checkpoint, StepResult> NaiveJointTrain(const TrainConfig &cfg, const TrainHooks &hooks = {}) {
  cfg.Validate();
  if (cfg.out_dir.empty()) throw InvalidArgument("out_dir is required");
  TrainData data = TrainData::Load(cfg.data_dir);
  const ModelSpec spec = SpecFromConfig(cfg, data.num_sources(), SampleRateOf(data));
  std::filesystem::create_directories(cfg.out_dir);
  size_t classes = spec.identity_aware ? ManifestSpeakers(data.train).size() : 2;
  Checkpoint ck;
  ck.model = InitModel(spec, std::max<size_t>(classes, 2), cfg.seed);
  Model &model = ck.model;

  std::set<std::string> names;
  std::vector<ad::Parameter *> params;
  if (model.idnet) {
    names.insert(model.idnet->name);
    for (auto *p : ParamPointers(&*model.idnet)) params.push_back(p);
  }
  for (auto &s : model.stages) {
    names.insert(s.name);
    for (auto *p : ParamPointers(&s)) params.push_back(p);
  }
  SeparationTask task = MakeSeparationTask(&model, spec.num_stages() - 1, names, "naive", data, cfg);
  StepResult r = RunEpochs(
      "naive", params, cfg, hooks, [&](size_t e, Adam &opt) { return task.TrainEpoch(e, opt); },
      [&] { return task.ValidLoss(); });
  if (model.idnet) model.idnet->trained_by = "naive";
  for (auto &s : model.stages) s.trained_by = "naive";
  ck.meta["step_results"] = nlohmann::json::array({StepResultToJson(r)});
  ck.meta["config"] = ConfigToText(cfg);
  SaveCheckpoint(cfg.out_dir + "/naive.ckpt", ck);
  WriteTraceCsv(cfg.out_dir + "/trace_naive.csv", {r});
  return {ck, r};
}

}  // namespace tastas
