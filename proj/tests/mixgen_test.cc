// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tastas/mixgen.hpp"

#include <algorithm>
#include <complex>

#include <gtest/gtest.h>
#include <unsupported/Eigen/FFT>

#include "test_util.h"

namespace tastas {
namespace {

ToyCorpusOptions SmallToy(size_t speakers = 8, size_t utts = 4, double dur = 0.5, uint64_t seed = 11) {
  ToyCorpusOptions o;
  o.n_speakers = speakers;
  o.utt_per_speaker = utts;
  o.duration_s = dur;
  o.seed = seed;
  return o;
}

// Frequency of the largest magnitude bin above 50 Hz.
double DominantFrequency(const Waveform &w) {
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, w.samples);
  const double df = double(w.sample_rate) / double(w.size());
  size_t best = 0;
  double best_mag = -1.0;
  for (size_t k = size_t(50.0 / df); k < w.size() / 2; ++k)
    if (std::abs(spec[k]) > best_mag) {
      best_mag = std::abs(spec[k]);
      best = k;
    }
  return double(best) * df;
}

TEST(ToyCorpus, CountsAndDurations) {
  ToyCorpus toy = MakeToyCorpus(SmallToy(8, 10, 4.0));
  EXPECT_EQ(toy.corpus.utterances.size(), 80u);
  for (const auto &u : toy.corpus.utterances) {
    EXPECT_EQ(u.audio.size(), 32000u);
    double peak = 0.0;
    for (double x : u.audio.samples) peak = std::max(peak, std::abs(x));
    EXPECT_NEAR(peak, 0.9, 1e-12);
  }
  EXPECT_THROW(MakeToyCorpus(SmallToy(1)), InvalidArgument);
}

TEST(ToyCorpus, Deterministic) {
  auto a = MakeToyCorpus(SmallToy()), b = MakeToyCorpus(SmallToy());
  ASSERT_EQ(a.corpus.utterances.size(), b.corpus.utterances.size());
  for (size_t i = 0; i < a.corpus.utterances.size(); ++i)
    EXPECT_EQ(a.corpus.utterances[i].audio.samples, b.corpus.utterances[i].audio.samples);
  auto c = MakeToyCorpus(SmallToy(8, 4, 0.5, 12));
  EXPECT_NE(a.corpus.utterances[0].audio.samples, c.corpus.utterances[0].audio.samples);
}

TEST(ToyCorpus, ProfilesDifferAndFundamentalsDistinct) {
  ToyCorpus toy = MakeToyCorpus(SmallToy(8, 3, 1.0));
  for (size_t a = 0; a < toy.profiles.size(); ++a)
    for (size_t b = a + 1; b < toy.profiles.size(); ++b)
      EXPECT_LT(toy.profiles[a].f0_high, toy.profiles[b].f0_low);
  std::vector<std::vector<double>> f0(8);
  for (const auto &u : toy.corpus.utterances) f0[u.speaker].push_back(DominantFrequency(u.audio));
  for (size_t a = 0; a < 8; ++a)
    for (size_t b = a + 1; b < 8; ++b)
      for (double fa : f0[a])
        for (double fb : f0[b]) EXPECT_GT(std::abs(fa - fb), 1.0) << a << " vs " << b;
}

TEST(ToyCorpus, IdRoundTrip) {
  auto toy = MakeToyCorpus(SmallToy(3, 2, 0.25, 5));
  Corpus c = ResolveCorpus(toy.corpus.id);
  ASSERT_EQ(c.utterances.size(), toy.corpus.utterances.size());
  EXPECT_EQ(c.utterances.back().audio.samples, toy.corpus.utterances.back().audio.samples);
  EXPECT_THROW(ResolveCorpus("bogus:1"), FormatError);
}

TEST(BuildManifest, SnrRangeAndReference) {
  auto toy = MakeToyCorpus(SmallToy());
  Manifest m = BuildManifest(toy.corpus, 3, 100, 0.0, 5.0, 7);
  ASSERT_EQ(m.records.size(), 100u);
  for (const auto &r : m.records) {
    EXPECT_EQ(r.snrs_db[0], 0.0);
    for (size_t i = 1; i < 3; ++i) {
      EXPECT_GE(r.snrs_db[i], 0.0);
      EXPECT_LE(r.snrs_db[i], 5.0);
    }
  }
}

TEST(BuildManifest, TwoSpeakersForced) {
  auto toy = MakeToyCorpus(SmallToy(2, 3));
  Manifest m = BuildManifest(toy.corpus, 2, 20, 0.0, 5.0, 1);
  for (const auto &r : m.records) {
    auto spk = [](const std::string &k) { return k.substr(0, k.find('/')); };
    std::set<std::string> s{spk(r.source_refs[0]), spk(r.source_refs[1])};
    EXPECT_EQ(s, (std::set<std::string>{"spk00", "spk01"}));
  }
}

TEST(BuildManifest, DeterministicBytesAndErrors) {
  auto toy = MakeToyCorpus(SmallToy());
  EXPECT_EQ(ManifestToJsonl(BuildManifest(toy.corpus, 3, 30, 0, 5, 9)),
            ManifestToJsonl(BuildManifest(toy.corpus, 3, 30, 0, 5, 9)));
  EXPECT_THROW(BuildManifest(toy.corpus, 9, 1, 0, 5, 9), InvalidArgument);
  EXPECT_THROW(BuildManifest(toy.corpus, 3, 1, 5, 0, 9), InvalidArgument);
  Corpus empty;
  EXPECT_THROW(BuildManifest(empty, 2, 1, 0, 5, 9), InvalidArgument);
}

TEST(Manifest, JsonlRoundTrip) {
  auto toy = MakeToyCorpus(SmallToy());
  Manifest m = BuildManifest(toy.corpus, 3, 10, 0, 5, 2, Split::kValid);
  std::string text = ManifestToJsonl(m);
  Manifest back = ManifestFromJsonl(text);
  EXPECT_EQ(ManifestToJsonl(back), text);
  EXPECT_EQ(back.split, Split::kValid);
  for (size_t i = 0; i < m.records.size(); ++i) EXPECT_EQ(back.records[i].gains, m.records[i].gains);
  EXPECT_THROW(ManifestFromJsonl("{\"schema_version\": 99}\n"), FormatError);
  EXPECT_THROW(ManifestFromJsonl("not json\n"), FormatError);
  EXPECT_THROW(ManifestFromJsonl(""), FormatError);
}

TEST(Synthesize, EqualPowerSourcesAtZeroDb) {
  Corpus c;
  c.id = "test";
  c.speakers = {"a", "b"};
  c.utterances.push_back({"a/1", 0, testing::Sine(200, 8000, 800, 0.5)});
  c.utterances.push_back({"b/1", 1, testing::Sine(300, 8000, 800, 0.5)});
  c.Reindex();
  Manifest m = BuildManifest(c, 2, 1, 0.0, 0.0, 3);
  const auto &r = m.records[0];
  EXPECT_NEAR(r.gains[0], r.gains[1], 1e-12);
  Mixture mx = Synthesize(r, c);
  for (size_t t = 0; t < mx.mixture.size(); ++t) EXPECT_EQ(mx.mixture[t], mx.sources[0][t] + mx.sources[1][t]);
}

TEST(Synthesize, MeasuredSnrAndExactSum) {
  auto toy = MakeToyCorpus(SmallToy());
  Manifest m = BuildManifest(toy.corpus, 3, 20, 0.0, 5.0, 4);
  for (const auto &r : m.records) {
    Mixture mx = Synthesize(r, toy.corpus);
    for (size_t i = 1; i < 3; ++i)
      EXPECT_NEAR(SnrDb(Power(mx.sources[i]), Power(mx.sources[0])), r.snrs_db[i], 1e-6);
    for (size_t t = 0; t < mx.mixture.size(); ++t)
      EXPECT_EQ(mx.mixture[t] - (mx.sources[0][t] + mx.sources[1][t] + mx.sources[2][t]), 0.0);
    double peak = 0.0;
    for (double x : mx.mixture.samples) peak = std::max(peak, std::abs(x));
    EXPECT_LE(peak, kMixturePeak + 1e-12);
  }
}

TEST(Synthesize, RequestedFiveDb) {
  auto toy = MakeToyCorpus(SmallToy());
  MixtureRecord r = BuildManifest(toy.corpus, 2, 1, 5.0, 5.0, 8).records[0];
  Mixture mx = Synthesize(r, toy.corpus);
  EXPECT_NEAR(10.0 * std::log10(Power(mx.sources[1]) / Power(mx.sources[0])), 5.0, 1e-6);
}

TEST(Synthesize, Errors) {
  auto toy = MakeToyCorpus(SmallToy());
  MixtureRecord r = BuildManifest(toy.corpus, 2, 1, 0, 5, 8).records[0];
  MixtureRecord bad = r;
  bad.source_refs[1] = "nobody/utt000";
  EXPECT_THROW(Synthesize(bad, toy.corpus), InvalidArgument);
  bad = r;
  bad.source_refs[1] = bad.source_refs[0];
  EXPECT_THROW(Synthesize(bad, toy.corpus), InvalidArgument);

  Corpus c;
  c.speakers = {"a", "b"};
  c.utterances.push_back({"a/1", 0, Waveform(std::vector<double>(10, 0.0))});
  c.utterances.push_back({"b/1", 1, Waveform(std::vector<double>(10, 0.1))});
  c.Reindex();
  MixtureRecord z{{"a/1", "b/1"}, {0, 0}, {1, 1}, 0};
  EXPECT_THROW(Synthesize(z, c), InvalidArgument);
}

TEST(Manifest, SplitAudioTree) {
  auto toy = MakeToyCorpus(SmallToy(4, 2, 0.1));
  Manifest m = BuildManifest(toy.corpus, 2, 3, 0, 5, 1, Split::kTest);
  auto dir = testing::TempDir("split_tree");
  WriteSplitAudio(dir.string(), m, toy.corpus);
  for (size_t r = 0; r < 3; ++r) {
    std::string name = m.RecordId(r) + ".wav";
    Waveform mix = LoadWav((dir / "test" / "mix" / name).string());
    Mixture mx = Synthesize(m.records[r], toy.corpus);
    ASSERT_EQ(mix.size(), mx.mixture.size());
    for (size_t t = 0; t < mix.size(); ++t) EXPECT_NEAR(mix[t], mx.mixture[t], 1.0 / 32768.0);
    EXPECT_TRUE(std::filesystem::exists(dir / "test" / "s1" / name));
    EXPECT_TRUE(std::filesystem::exists(dir / "test" / "s2" / name));
  }
}

TEST(Manifest, SpeakerDisjointness) {
  auto toy = MakeToyCorpus(SmallToy(6, 2));
  std::vector<size_t> first, second;
  for (size_t i = 0; i < toy.corpus.utterances.size(); ++i)
    (toy.corpus.utterances[i].speaker < 3 ? first : second).push_back(i);
  Manifest a = BuildManifest(toy.corpus, 2, 10, 0, 5, 1, Split::kTrain, first);
  Manifest b = BuildManifest(toy.corpus, 2, 10, 0, 5, 1, Split::kTest, second);
  EXPECT_TRUE(SpeakersDisjoint(a, b));
  EXPECT_FALSE(SpeakersDisjoint(a, a));
}

std::vector<Mixture> RandomBatch(size_t B, size_t S, size_t len, uint64_t seed) {
  Rng rng(seed);
  std::vector<Mixture> batch(B);
  for (auto &m : batch) {
    m.mixture = Waveform(std::vector<double>(len, 0.0));
    for (size_t s = 0; s < S; ++s) {
      std::vector<double> x(len);
      for (double &v : x) v = rng.Uniform(-0.3, 0.3);
      for (size_t t = 0; t < len; ++t) m.mixture[t] += x[t];
      m.sources.emplace_back(std::move(x));
    }
  }
  return batch;
}

TEST(OnlineRemix, SingletonBatchUnchanged) {
  auto batch = RandomBatch(1, 3, 16, 1);
  auto out = OnlineRemix(batch, 5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].mixture.samples, batch[0].mixture.samples);
  for (size_t s = 0; s < 3; ++s) EXPECT_EQ(out[0].sources[s].samples, batch[0].sources[s].samples);
}

TEST(OnlineRemix, SumIdentityAndMultiset) {
  auto batch = RandomBatch(4, 3, 32, 2);
  auto out = OnlineRemix(batch, 77);
  for (const auto &m : out)
    for (size_t t = 0; t < 32; ++t)
      EXPECT_EQ(m.mixture[t] - ((m.sources[0][t] + m.sources[1][t]) + m.sources[2][t]), 0.0);
  for (size_t s = 0; s < 3; ++s) {
    std::multiset<std::vector<double>> in_set, out_set;
    for (size_t b = 0; b < 4; ++b) {
      in_set.insert(batch[b].sources[s].samples);
      out_set.insert(out[b].sources[s].samples);
    }
    EXPECT_EQ(in_set, out_set);
  }
  EXPECT_EQ(OnlineRemix(batch, 77)[2].mixture.samples, out[2].mixture.samples);
}

TEST(OnlineRemix, RedrawGainsKeepsSumIdentity) {
  auto batch = RandomBatch(3, 2, 64, 4);
  RemixOptions o;
  o.redraw_gains = true;
  for (const auto &m : OnlineRemix(batch, 3, o)) {
    for (size_t t = 0; t < 64; ++t) EXPECT_EQ(m.mixture[t], m.sources[0][t] + m.sources[1][t]);
    double snr = SnrDb(Power(m.sources[1]), Power(m.sources[0]));
    EXPECT_GE(snr, -1e-9);
    EXPECT_LE(snr, 5.0 + 1e-9);
  }
}

TEST(OnlineRemix, HeterogeneousBatchRejected) {
  auto batch = RandomBatch(2, 2, 8, 1);
  auto other = RandomBatch(1, 3, 8, 2);
  batch.push_back(other[0]);
  EXPECT_THROW(OnlineRemix(batch, 1), InvalidArgument);
}

TEST(BuildSplits, DisjointSpeakersAndHeldOutUtterances) {
  ToyCorpusOptions o;
  o.n_speakers = 8;
  o.utt_per_speaker = 10;
  o.duration_s = 0.05;
  Corpus c = MakeToyCorpus(o).corpus;
  SplitOptions so;
  so.num_sources = 3;
  so.n_train = 50;
  so.n_valid = 20;
  so.n_test = 20;
  so.seed = 7;
  SplitManifests m = BuildSplits(c, so);
  EXPECT_EQ(m.train.records.size(), 50u);
  EXPECT_EQ(m.valid.records.size(), 20u);
  EXPECT_EQ(m.test.records.size(), 20u);
  EXPECT_EQ(m.test.split, Split::kTest);
  EXPECT_TRUE(SpeakersDisjoint(m.train, m.test));
  EXPECT_TRUE(SpeakersDisjoint(m.valid, m.test));
  EXPECT_EQ(ManifestSpeakers(m.test).size(), 3u);  // max(S, ceil(8 * 16 / 116))
  std::set<std::string> train_utts;
  for (const auto &r : m.train.records) train_utts.insert(r.source_refs.begin(), r.source_refs.end());
  for (const auto &r : m.valid.records)
    for (const auto &k : r.source_refs) EXPECT_FALSE(train_utts.count(k)) << k;
  for (const auto &s : ManifestSpeakers(m.valid)) EXPECT_TRUE(ManifestSpeakers(m.train).count(s));
  EXPECT_EQ(ManifestToJsonl(BuildSplits(c, so).valid), ManifestToJsonl(m.valid));
  so.num_sources = 5;
  EXPECT_THROW(BuildSplits(c, so), InvalidArgument);
}

}  // namespace
}  // namespace tastas
