// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Mixture synthesis: source corpora (synthetic toy speakers or a directory
// of WAVs), manifest construction and I/O, exact re-synthesis, and online
// remixing of training batches.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tastas/audio.hpp"
#include "tastas/error.hpp"
#include "tastas/rng.hpp"

namespace tastas {

struct Utterance {
  std::string key;  // "<speaker>/<name>"
  size_t speaker = 0;
  Waveform audio;
};

struct Corpus {
  std::string id;  // enough to rebuild the corpus, see ResolveCorpus
  std::vector<std::string> speakers;
  std::vector<Utterance> utterances;

  const Utterance &Find(const std::string &key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw InvalidArgument("unresolvable source reference: " + key);
    return utterances[it->second];
  }
  bool Contains(const std::string &key) const { return index_.count(key) != 0; }

  void Reindex() {
    index_.clear();
    for (size_t i = 0; i < utterances.size(); ++i) index_[utterances[i].key] = i;
  }

  std::vector<size_t> UtterancesOf(size_t speaker) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < utterances.size(); ++i)
      if (utterances[i].speaker == speaker) out.push_back(i);
    return out;
  }

 private:
  std::map<std::string, size_t> index_;
};

// Generator parameters of one synthetic speaker.
struct SpeakerProfile {
  double f0_low = 0.0, f0_high = 0.0;  // Hz
  std::vector<double> harmonic_weights;
  double am_rate = 0.0;   // Hz
  double am_depth = 0.0;  // in [0, 1)
};

struct ToyCorpus {
  std::vector<SpeakerProfile> profiles;
  Corpus corpus;
};

struct ToyCorpusOptions {
  size_t n_speakers = 8;
  size_t utt_per_speaker = 10;
  double duration_s = 4.0;
  uint64_t seed = 0;
  int sample_rate = kDefaultSampleRate;
};

inline std::string ToyCorpusId(const ToyCorpusOptions &o) {
  std::ostringstream os;
  os.precision(17);
  os << "toy:speakers=" << o.n_speakers << ",utts=" << o.utt_per_speaker
     << ",duration=" << o.duration_s << ",seed=" << o.seed << ",rate=" << o.sample_rate;
  return os.str();
}

namespace internal {

inline std::string ZeroPad(size_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*zu", width, v);
  return buf;
}

}  // namespace internal

// Harmonic tone complexes with a speaker-specific fundamental band, spectral
// tilt and amplitude modulation. Bands are disjoint and log-spaced over
// 100..350 Hz.
inline ToyCorpus MakeToyCorpus(const ToyCorpusOptions &opts) {
  if (opts.n_speakers < 2) throw InvalidArgument("toy corpus needs at least 2 speakers");
  if (opts.utt_per_speaker < 1) throw InvalidArgument("toy corpus needs utterances");
  if (!(opts.duration_s > 0.0)) throw InvalidArgument("toy corpus needs positive duration");
  if (opts.sample_rate <= 0) throw InvalidArgument("sample rate must be positive");

  constexpr double kLowest = 100.0, kHighest = 350.0, kVibrato = 0.01;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  ToyCorpus toy;
  const size_t n = opts.n_speakers;
  const double ratio = std::pow(kHighest / kLowest, 1.0 / static_cast<double>(n - 1));
  const double half_band = std::pow(ratio, 0.3);
  const double fs = opts.sample_rate;

  for (size_t s = 0; s < n; ++s) {
    Rng rng = Rng::Derive(opts.seed, 1000 + s);
    SpeakerProfile p;
    double center = kLowest * std::pow(ratio, static_cast<double>(s));
    p.f0_low = center / half_band;
    p.f0_high = center * half_band;
    double tilt = rng.Uniform(0.8, 1.6);
    size_t n_harm = 1;
    while (n_harm < 24 && double(n_harm + 1) * p.f0_high * (1 + kVibrato) < 0.45 * fs) ++n_harm;
    p.harmonic_weights.push_back(1.0);
    for (size_t k = 2; k <= n_harm; ++k)
      p.harmonic_weights.push_back(std::pow(double(k), -tilt) * rng.Uniform(0.4, 1.0));
    p.am_rate = rng.Uniform(2.0, 6.0);
    p.am_depth = rng.Uniform(0.3, 0.7);
    toy.profiles.push_back(p);
    toy.corpus.speakers.push_back("spk" + internal::ZeroPad(s, 2));
  }

  const auto len = static_cast<size_t>(std::llround(opts.duration_s * fs));
  for (size_t s = 0; s < n; ++s) {
    const SpeakerProfile &p = toy.profiles[s];
    for (size_t u = 0; u < opts.utt_per_speaker; ++u) {
      Rng rng = Rng::Derive(opts.seed, (s + 1) * 100003 + u);
      double f0 = rng.Uniform(p.f0_low * (1 + kVibrato), p.f0_high / (1 + kVibrato));
      double vib_rate = rng.Uniform(3.0, 6.0), vib_phase = rng.Uniform(0, kTwoPi);
      double am_phase = rng.Uniform(0, kTwoPi);
      std::vector<double> phases(p.harmonic_weights.size());
      for (double &ph : phases) ph = rng.Uniform(0, kTwoPi);

      std::vector<double> x(len);
      double phase = 0.0, peak = 0.0;
      for (size_t t = 0; t < len; ++t) {
        double time = double(t) / fs;
        double inst = f0 * (1.0 + kVibrato * std::sin(kTwoPi * vib_rate * time + vib_phase));
        double am = 1.0 - p.am_depth * 0.5 * (1.0 - std::cos(kTwoPi * p.am_rate * time + am_phase));
        double acc = 0.0;
        for (size_t k = 0; k < phases.size(); ++k)
          acc += p.harmonic_weights[k] * std::sin(double(k + 1) * phase + phases[k]);
        x[t] = am * acc;
        peak = std::max(peak, std::abs(x[t]));
        phase = std::fmod(phase + kTwoPi * inst / fs, kTwoPi);
      }
      for (double &v : x) v *= 0.9 / peak;
      toy.corpus.utterances.push_back(
          {toy.corpus.speakers[s] + "/utt" + internal::ZeroPad(u, 3), s, Waveform(std::move(x), opts.sample_rate)});
    }
  }
  toy.corpus.id = ToyCorpusId(opts);
  toy.corpus.Reindex();
  return toy;
}

// Directory layout <dir>/<speaker>/<utterance>.wav.
inline Corpus LoadCorpusDir(const std::string &dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw MissingFileError("corpus directory not found: " + dir);
  Corpus c;
  c.id = "dir:" + fs::absolute(dir).lexically_normal().string();
  std::vector<fs::path> spk_dirs;
  for (const auto &e : fs::directory_iterator(dir))
    if (e.is_directory()) spk_dirs.push_back(e.path());
  std::sort(spk_dirs.begin(), spk_dirs.end());
  for (const auto &sd : spk_dirs) {
    std::vector<fs::path> wavs;
    for (const auto &e : fs::directory_iterator(sd))
      if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path());
    if (wavs.empty()) continue;
    std::sort(wavs.begin(), wavs.end());
    size_t spk = c.speakers.size();
    c.speakers.push_back(sd.filename().string());
    for (const auto &w : wavs)
      c.utterances.push_back({c.speakers[spk] + "/" + w.stem().string(), spk, LoadWav(w.string())});
  }
  if (c.speakers.empty()) throw InvalidArgument("empty corpus: " + dir);
  c.Reindex();
  return c;
}

// Rebuilds a corpus from its id ("toy:..." or "dir:...").
inline Corpus ResolveCorpus(const std::string &id) {
  if (id.rfind("dir:", 0) == 0) return LoadCorpusDir(id.substr(4));
  if (id.rfind("toy:", 0) != 0) throw FormatError("unknown corpus id: " + id);
  ToyCorpusOptions o;
  std::stringstream ss(id.substr(4));
  std::string kv;
  while (std::getline(ss, kv, ',')) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw FormatError("bad corpus id: " + id);
    std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
    if (k == "speakers") o.n_speakers = std::stoul(v);
    else if (k == "utts") o.utt_per_speaker = std::stoul(v);
    else if (k == "duration") o.duration_s = std::stod(v);
    else if (k == "seed") o.seed = std::stoull(v);
    else if (k == "rate") o.sample_rate = std::stoi(v);
    else throw FormatError("bad corpus id key: " + k);
  }
  return MakeToyCorpus(o).corpus;
}

struct MixtureRecord {
  std::vector<std::string> source_refs;
  std::vector<double> snrs_db;
  std::vector<double> gains;
  uint64_t seed = 0;

  size_t num_sources() const { return source_refs.size(); }
};

enum class Split { kTrain, kValid, kTest };

inline std::string SplitName(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split ParseSplit(const std::string &s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid") return Split::kValid;
  if (s == "test") return Split::kTest;
  throw FormatError("unknown split: " + s);
}

inline constexpr int kManifestSchemaVersion = 1;

struct Manifest {
  Split split = Split::kTrain;
  size_t num_sources = 0;
  double snr_low_db = 0.0, snr_high_db = 5.0;
  std::string corpus_id;
  uint64_t seed = 0;
  std::vector<MixtureRecord> records;

  std::string RecordId(size_t i) const { return SplitName(split) + "_" + internal::ZeroPad(i, 5); }
};

// Mixtures are scaled, with SNRs untouched, so their peak stays below this.
inline constexpr double kMixturePeak = 0.9;

namespace internal {

inline size_t CommonLength(const std::vector<const Utterance *> &utts) {
  size_t n = SIZE_MAX;
  for (const auto *u : utts) n = std::min(n, u->audio.size());
  return n;
}

inline Waveform Head(const Waveform &w, size_t n) {
  return Waveform(std::vector<double>(w.samples.begin(), w.samples.begin() + static_cast<std::ptrdiff_t>(n)),
                  w.sample_rate);
}

}  // namespace internal

// Draws n_mixtures records over the eligible utterances (all when empty).
// Each record picks S distinct speakers uniformly, one utterance each, a
// 0 dB reference SNR for source 0 and uniform SNRs in [low, high] for the
// rest. Gains are closed form against source 0 after truncation to the
// shortest utterance, then scaled jointly to keep the mixture peak <= 0.9.
inline Manifest BuildManifest(const Corpus &corpus, size_t num_sources, size_t n_mixtures,
                              double snr_low_db, double snr_high_db, uint64_t seed,
                              Split split = Split::kTrain,
                              const std::vector<size_t> &eligible_utterances = {}) {
  if (corpus.utterances.empty()) throw InvalidArgument("empty corpus");
  if (num_sources < 2) throw InvalidArgument("need at least 2 sources per mixture");
  if (snr_low_db > snr_high_db) throw InvalidArgument("snr range low > high");

  std::vector<size_t> pool = eligible_utterances;
  if (pool.empty())
    for (size_t i = 0; i < corpus.utterances.size(); ++i) pool.push_back(i);
  std::map<size_t, std::vector<size_t>> by_speaker;
  for (size_t u : pool) by_speaker[corpus.utterances.at(u).speaker].push_back(u);
  std::vector<size_t> speakers;
  for (const auto &kv : by_speaker) speakers.push_back(kv.first);
  if (speakers.size() < num_sources)
    throw InvalidArgument("corpus has fewer speakers than sources per mixture");

  Manifest m;
  m.split = split;
  m.num_sources = num_sources;
  m.snr_low_db = snr_low_db;
  m.snr_high_db = snr_high_db;
  m.corpus_id = corpus.id;
  m.seed = seed;
  for (size_t r = 0; r < n_mixtures; ++r) {
    Rng rng = Rng::Derive(seed, r);
    MixtureRecord rec;
    rec.seed = rng.NextU64();
    std::vector<size_t> order = speakers;
    rng.Shuffle(&order);
    std::vector<const Utterance *> utts;
    for (size_t i = 0; i < num_sources; ++i) {
      const auto &cands = by_speaker[order[i]];
      const Utterance &u = corpus.utterances[cands[rng.Below(cands.size())]];
      rec.source_refs.push_back(u.key);
      rec.snrs_db.push_back(i == 0 ? 0.0 : rng.Uniform(snr_low_db, snr_high_db));
      utts.push_back(&u);
    }
    const size_t len = internal::CommonLength(utts);
    const double ref_power = Power(internal::Head(utts[0]->audio, len));
    if (!(ref_power > 0.0)) throw InvalidArgument("zero-power source: " + rec.source_refs[0]);
    std::vector<double> mix(len, 0.0);
    for (size_t i = 0; i < num_sources; ++i) {
      double p = Power(internal::Head(utts[i]->audio, len));
      if (!(p > 0.0)) throw InvalidArgument("zero-power source: " + rec.source_refs[i]);
      double g = i == 0 ? 1.0 : GainForSnr(p, ref_power, rec.snrs_db[i]);
      rec.gains.push_back(g);
      for (size_t t = 0; t < len; ++t) mix[t] += g * utts[i]->audio[t];
    }
    double peak = 0.0;
    for (double v : mix) peak = std::max(peak, std::abs(v));
    if (peak > kMixturePeak)
      for (double &g : rec.gains) g *= kMixturePeak / peak;
    m.records.push_back(std::move(rec));
  }
  return m;
}

struct Mixture {
  Waveform mixture;
  std::vector<Waveform> sources;
};

// Exact re-synthesis: sources[i] = gains[i] * utterance i (shortest length),
// mixture = sources[0] + sources[1] + ... in slot order.
inline Mixture Synthesize(const MixtureRecord &rec, const Corpus &corpus) {
  const size_t S = rec.num_sources();
  if (S < 2 || rec.snrs_db.size() != S || rec.gains.size() != S)
    throw InvalidArgument("malformed mixture record");
  std::vector<const Utterance *> utts;
  std::set<size_t> seen;
  for (const auto &ref : rec.source_refs) {
    const Utterance &u = corpus.Find(ref);
    if (!seen.insert(u.speaker).second) throw InvalidArgument("record repeats a speaker: " + ref);
    utts.push_back(&u);
  }
  const size_t len = internal::CommonLength(utts);
  Mixture out;
  out.mixture = Waveform(std::vector<double>(len, 0.0), utts[0]->audio.sample_rate);
  for (size_t i = 0; i < S; ++i) {
    Waveform src = internal::Head(utts[i]->audio, len);
    if (!(Power(src) > 0.0)) throw InvalidArgument("zero-power source: " + rec.source_refs[i]);
    for (double &v : src.samples) v *= rec.gains[i];
    out.sources.push_back(std::move(src));
  }
  for (size_t i = 0; i < S; ++i)
    for (size_t t = 0; t < len; ++t) out.mixture[t] += out.sources[i][t];
  return out;
}

// ---- manifest I/O (line-delimited JSON: header line, then one record per line)

inline std::string ManifestToJsonl(const Manifest &m) {
  nlohmann::ordered_json header;
  header["schema_version"] = kManifestSchemaVersion;
  header["split"] = SplitName(m.split);
  header["num_sources"] = m.num_sources;
  header["snr_range_db"] = {m.snr_low_db, m.snr_high_db};
  header["corpus"] = m.corpus_id;
  header["seed"] = m.seed;
  header["num_records"] = m.records.size();
  std::string out = header.dump() + "\n";
  for (const auto &r : m.records) {
    nlohmann::ordered_json j;
    j["source_refs"] = r.source_refs;
    j["snrs_db"] = r.snrs_db;
    j["gains"] = r.gains;
    j["seed"] = r.seed;
    out += j.dump() + "\n";
  }
  return out;
}

inline Manifest ManifestFromJsonl(const std::string &text) {
  std::istringstream is(text);
  std::string line;
  Manifest m;
  bool have_header = false;
  try {
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      if (!have_header) {
        if (j.at("schema_version").get<int>() != kManifestSchemaVersion)
          throw FormatError("unsupported manifest schema version");
        m.split = ParseSplit(j.at("split").get<std::string>());
        m.num_sources = j.at("num_sources").get<size_t>();
        m.snr_low_db = j.at("snr_range_db").at(0).get<double>();
        m.snr_high_db = j.at("snr_range_db").at(1).get<double>();
        m.corpus_id = j.at("corpus").get<std::string>();
        m.seed = j.at("seed").get<uint64_t>();
        have_header = true;
        continue;
      }
      MixtureRecord r;
      r.source_refs = j.at("source_refs").get<std::vector<std::string>>();
      r.snrs_db = j.at("snrs_db").get<std::vector<double>>();
      r.gains = j.at("gains").get<std::vector<double>>();
      r.seed = j.at("seed").get<uint64_t>();
      if (r.num_sources() != m.num_sources || r.snrs_db.size() != m.num_sources ||
          r.gains.size() != m.num_sources)
        throw FormatError("record source count disagrees with header");
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  if (!have_header) throw FormatError("manifest has no header line");
  return m;
}

inline void WriteManifest(const std::string &path, const Manifest &m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write: " + path);
  os << ManifestToJsonl(m);
  if (!os) throw IoError("write failed: " + path);
}

inline Manifest ReadManifest(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError("cannot open manifest: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ManifestFromJsonl(ss.str());
}

// Speakers referenced by a manifest, as corpus speaker names.
inline std::set<std::string> ManifestSpeakers(const Manifest &m) {
  std::set<std::string> out;
  for (const auto &r : m.records)
    for (const auto &ref : r.source_refs) out.insert(ref.substr(0, ref.find('/')));
  return out;
}

inline bool SpeakersDisjoint(const Manifest &a, const Manifest &b) {
  auto sa = ManifestSpeakers(a), sb = ManifestSpeakers(b);
  for (const auto &s : sa)
    if (sb.count(s)) return false;
  return true;
}

// Writes <out>/<split>/mix/<id>.wav and <out>/<split>/s<i>/<id>.wav, i from 1.
// Returns the number of clipped samples.
inline size_t WriteSplitAudio(const std::string &out_dir, const Manifest &m, const Corpus &corpus) {
  namespace fs = std::filesystem;
  fs::path root = fs::path(out_dir) / SplitName(m.split);
  fs::create_directories(root / "mix");
  for (size_t i = 0; i < m.num_sources; ++i) fs::create_directories(root / ("s" + std::to_string(i + 1)));
  size_t clipped = 0;
  for (size_t r = 0; r < m.records.size(); ++r) {
    Mixture mx = Synthesize(m.records[r], corpus);
    std::string name = m.RecordId(r) + ".wav";
    clipped += SaveWav((root / "mix" / name).string(), mx.mixture);
    for (size_t i = 0; i < mx.sources.size(); ++i)
      clipped += SaveWav((root / ("s" + std::to_string(i + 1)) / name).string(), mx.sources[i]);
  }
  return clipped;
}

// ---- train / valid / test splits

struct SplitOptions {
  size_t num_sources = 2;
  size_t n_train = 0, n_valid = 0, n_test = 0;
  double snr_low_db = 0.0, snr_high_db = 5.0;
  uint64_t seed = 0;
};

struct SplitManifests {
  Manifest train, valid, test;
};

// Test speakers (max(S, ceil(n * 16 / 116)) of the n speakers, chosen by
// seed) never appear in train or valid. The remaining speakers' utterances
// are split about 80/20 between train and valid, so valid mixtures use
// seen speakers but unseen recordings.
inline SplitManifests BuildSplits(const Corpus &corpus, const SplitOptions &o) {
  const size_t n = corpus.speakers.size(), S = o.num_sources;
  const size_t n_test_spk = std::max(S, (n * 16 + 115) / 116);
  if (n < n_test_spk + S)
    throw InvalidArgument("need at least " + std::to_string(n_test_spk + S) + " speakers for disjoint splits, have " +
                          std::to_string(n));
  Rng rng = Rng::Derive(o.seed, 0x5b11);
  std::vector<size_t> order = rng.Permutation(n);
  std::set<size_t> test_spk(order.begin(), order.begin() + long(n_test_spk));

  std::vector<size_t> train_utts, valid_utts, test_utts;
  for (size_t spk = 0; spk < n; ++spk) {
    std::vector<size_t> utts = corpus.UtterancesOf(spk);
    if (test_spk.count(spk)) {
      test_utts.insert(test_utts.end(), utts.begin(), utts.end());
      continue;
    }
    if (utts.size() < 2) throw InvalidArgument("speaker " + corpus.speakers[spk] + " needs >= 2 utterances");
    rng.Shuffle(&utts);
    size_t n_valid = std::clamp<size_t>((utts.size() + 2) / 5, 1, utts.size() - 1);
    valid_utts.insert(valid_utts.end(), utts.begin(), utts.begin() + long(n_valid));
    train_utts.insert(train_utts.end(), utts.begin() + long(n_valid), utts.end());
  }
  std::sort(train_utts.begin(), train_utts.end());
  std::sort(valid_utts.begin(), valid_utts.end());
  std::sort(test_utts.begin(), test_utts.end());
  SplitManifests m;
  m.train = BuildManifest(corpus, S, o.n_train, o.snr_low_db, o.snr_high_db, Rng::Mix(o.seed + 1), Split::kTrain,
                          train_utts);
  m.valid = BuildManifest(corpus, S, o.n_valid, o.snr_low_db, o.snr_high_db, Rng::Mix(o.seed + 2), Split::kValid,
                          valid_utts);
  m.test = BuildManifest(corpus, S, o.n_test, o.snr_low_db, o.snr_high_db, Rng::Mix(o.seed + 3), Split::kTest,
                         test_utts);
  return m;
}

// ---- online remixing

struct RemixOptions {
  // Off: sources are re-paired with their gains untouched. On: every slot
  // after the first is rescaled to a fresh SNR in [snr_low_db, snr_high_db]
  // against the new slot-0 source.
  bool redraw_gains = false;
  double snr_low_db = 0.0, snr_high_db = 5.0;
};

// Re-pairs sources across a batch: slot s of output b takes slot s of input
// perm_s[b], one seeded permutation per slot. Mixtures are re-summed.
inline std::vector<Mixture> OnlineRemix(const std::vector<Mixture> &batch, uint64_t seed,
                                        const RemixOptions &opts = {}) {
  if (batch.empty()) return {};
  const size_t S = batch[0].sources.size(), len = batch[0].mixture.size();
  for (const auto &m : batch) {
    if (m.sources.size() != S || m.mixture.size() != len)
      throw InvalidArgument("online remix needs a homogeneous batch");
    for (const auto &s : m.sources)
      if (s.size() != len) throw InvalidArgument("online remix needs a homogeneous batch");
  }
  Rng rng(seed);
  std::vector<std::vector<size_t>> perms;
  for (size_t s = 0; s < S; ++s) perms.push_back(rng.Permutation(batch.size()));

  std::vector<Mixture> out(batch.size());
  for (size_t b = 0; b < batch.size(); ++b) {
    Mixture &m = out[b];
    for (size_t s = 0; s < S; ++s) m.sources.push_back(batch[perms[s][b]].sources[s]);
    if (opts.redraw_gains) {
      double ref = Power(m.sources[0]);
      for (size_t s = 1; s < S; ++s) {
        double p = Power(m.sources[s]);
        if (!(p > 0.0) || !(ref > 0.0)) continue;
        double g = GainForSnr(p, ref, rng.Uniform(opts.snr_low_db, opts.snr_high_db));
        for (double &v : m.sources[s].samples) v *= g;
      }
    }
    m.mixture = Waveform(std::vector<double>(len, 0.0), batch[0].mixture.sample_rate);
    for (size_t s = 0; s < S; ++s)
      for (size_t t = 0; t < len; ++t) m.mixture[t] += m.sources[s][t];
  }
  return out;
}

}  // namespace tastas
