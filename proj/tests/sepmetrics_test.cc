// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tastas/sepmetrics.hpp"

#include <algorithm>

#include <gtest/gtest.h>

#include "tastas/rng.hpp"
#include "test_util.h"

namespace tastas {
namespace {

using testing::Sine;

double MaxAbsDiff(const Waveform &a, const Waveform &b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(Stft, ZeroInputZeroGrid) {
  TFRepresentation tf = Stft(Waveform(std::vector<double>(1000, 0.0)));
  EXPECT_EQ(tf.bins(), 129);
  EXPECT_EQ(tf.grid.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(Istft(tf).samples, std::vector<double>(1000, 0.0));
}

TEST(Stft, BinCentredSineConcentrates) {
  // 500 Hz is bin 16 of a 256-point frame at 8 kHz. A periodic Hann window
  // spreads a bin-centred tone over bins k-1..k+1 only.
  TFRepresentation tf = Stft(Sine(500.0, 8000, 4096));
  for (Eigen::Index t = 2; t + 2 < tf.frames(); ++t) {
    Eigen::ArrayXd e = tf.grid.row(t).cwiseAbs2().transpose();
    Eigen::Index peak;
    e.maxCoeff(&peak);
    EXPECT_EQ(peak, 16);
    EXPECT_GE(e.segment(15, 3).sum() / e.sum(), 0.99);
    EXPECT_NEAR(e(16) / e.sum(), 2.0 / 3.0, 1e-6);
  }
}

TEST(Stft, PerfectReconstruction) {
  Rng rng(5);
  for (size_t n : {1u, 100u, 256u, 1000u, 4001u}) {
    std::vector<double> x(n);
    for (double &v : x) v = rng.Uniform(-1, 1);
    Waveform w(x);
    Waveform r = Istft(Stft(w));
    ASSERT_EQ(r.size(), n);
    EXPECT_LE(MaxAbsDiff(w, r), 1e-6) << n;
  }
  Waveform w = Sine(300.0, 8000, 3000);
  EXPECT_LE(MaxAbsDiff(w, Istft(Stft(w, {512, 128}))), 1e-6);
}

TEST(Stft, LinearityAndErrors) {
  Waveform w = Sine(700.0, 8000, 1500, 0.3);
  TFRepresentation tf = Stft(w);
  TFRepresentation twice = tf;
  twice.grid *= 2.0;
  Waveform a = Istft(tf), b = Istft(twice);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 2.0 * a[i], 1e-12);
  EXPECT_THROW(Stft(w, {250, 125}), InvalidArgument);
  EXPECT_THROW(Stft(w, {256, 0}), InvalidArgument);
  EXPECT_THROW(Stft(w, {256, 512}), InvalidArgument);
  TFRepresentation bare;
  EXPECT_THROW(Istft(bare), FormatError);
}

TEST(IdealRatioMasks, Examples) {
  auto one = [](double v) { return Eigen::MatrixXd::Constant(1, 1, v); };
  MaskSet two = IdealRatioMasks({one(2.0), one(2.0)});
  EXPECT_EQ(two.masks[0](0, 0), 0.5);
  EXPECT_EQ(two.masks[1](0, 0), 0.5);

  MaskSet five = IdealRatioMasks({one(3), one(1), one(1), one(0), one(0)});
  const double expect[] = {0.6, 0.2, 0.2, 0.0, 0.0};
  for (int s = 0; s < 5; ++s) EXPECT_EQ(five.masks[size_t(s)](0, 0), expect[s]);

  MaskSet zero = IdealRatioMasks({one(0), one(0), one(0)});
  for (const auto &m : zero.masks) EXPECT_EQ(m(0, 0), 1.0 / 3.0);

  EXPECT_THROW(IdealRatioMasks({one(1), Eigen::MatrixXd::Ones(2, 1)}), InvalidArgument);
  EXPECT_THROW(IdealRatioMasks({one(-1), one(1)}), InvalidArgument);
}

TEST(IdealRatioMasks, SumToOneProperty) {
  Rng rng(21);
  for (size_t S : {2u, 3u, 5u}) {
    std::vector<Eigen::MatrixXd> mags;
    for (size_t s = 0; s < S; ++s) {
      Eigen::MatrixXd m(7, 9);
      for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.Uniform() < 0.2 ? 0.0 : rng.Uniform(0, 5);
      mags.push_back(m);
    }
    MaskSet ms = IdealRatioMasks(mags);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(7, 9);
    for (const auto &m : ms.masks) {
      EXPECT_GE(m.minCoeff(), 0.0);
      EXPECT_LE(m.maxCoeff(), 1.0);
      sum += m;
    }
    EXPECT_LE((sum.array() - 1.0).abs().maxCoeff(), 1e-6);
  }
}

TEST(OracleIrm, SingleSourceIsIdentity) {
  Waveform w = Sine(440, 8000, 2000, 0.5);
  auto out = OracleIrmSeparate(w, {w});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_LE(MaxAbsDiff(out[0], w), 1e-6);
}

TEST(OracleIrm, DisjointTonesSeparate) {
  Waveform a = Sine(500, 8000, 8000, 0.4), b = Sine(1500, 8000, 8000, 0.4, 0.3);
  Waveform mix(std::vector<double>(8000));
  for (size_t i = 0; i < 8000; ++i) mix[i] = a[i] + b[i];
  auto out = OracleIrmSeparate(mix, {a, b});
  EXPECT_GE(SiSdr(out[0], a), 20.0);
  EXPECT_GE(SiSdr(out[1], b), 20.0);
  auto swapped = OracleIrmSeparate(mix, {b, a});
  EXPECT_EQ(swapped[0].samples, out[1].samples);
  EXPECT_EQ(swapped[1].samples, out[0].samples);
  EXPECT_THROW(OracleIrmSeparate(mix, {a, Waveform({1.0})}), InvalidArgument);
}

TEST(SiSdr, Examples) {
  Waveform ref = Sine(250, 8000, 800);
  EXPECT_EQ(SiSdr(ref, ref), kSiSdrCap);
  Waveform twice = ref;
  for (double &v : twice.samples) v *= 2.0;
  EXPECT_EQ(SiSdr(twice, ref), SiSdr(ref, ref));

  // noise orthogonal to the reference at one tenth of its power
  Waveform noise = Sine(500, 8000, 800, std::sqrt(0.1));
  Waveform est = ref;
  for (size_t i = 0; i < est.size(); ++i) est[i] += noise[i];
  EXPECT_NEAR(SiSdr(est, ref), 10.0, 1e-6);
  EXPECT_THROW(SiSdr(est, Waveform(std::vector<double>(800, 0.3))), InvalidArgument);
  EXPECT_THROW(SiSdr(est, Waveform({1.0, 2.0})), InvalidArgument);
}

TEST(SiSdr, ScaleInvarianceProperty) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> r(300), e(300);
    for (size_t i = 0; i < 300; ++i) {
      r[i] = rng.Uniform(-1, 1);
      e[i] = r[i] + rng.Uniform(-1, 1) * rng.Uniform(0.1, 2.0);
    }
    double base = SiSdr(e, r);
    for (double alpha : {1e-3, 0.5, 1.0, 7.0, 1e3}) {
      std::vector<double> scaled(e);
      for (double &v : scaled) v *= alpha;
      EXPECT_NEAR(SiSdr(scaled, r), base, 1e-6);
    }
  }
}

TEST(SiSdr, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  std::vector<double> r(40), e(40);
  for (size_t i = 0; i < 40; ++i) {
    r[i] = rng.Uniform(-1, 1);
    e[i] = 0.7 * r[i] + rng.Uniform(-0.5, 0.5);
  }
  std::vector<double> grad;
  SiSdr(e, r, &grad);
  for (size_t i = 0; i < 40; ++i) {
    auto ep = e, em = e;
    ep[i] += 1e-6;
    em[i] -= 1e-6;
    double fd = (SiSdr(ep, r) - SiSdr(em, r)) / 2e-6;
    EXPECT_NEAR(grad[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(PitAssign, Examples) {
  Eigen::MatrixXd diag = Eigen::MatrixXd::Identity(4, 4) * 10.0;
  for (auto method : {PitMethod::kBruteForce, PitMethod::kHungarian}) {
    auto a = PitAssign(diag, method);
    EXPECT_EQ(a.perm, (std::vector<size_t>{0, 1, 2, 3}));
    EXPECT_EQ(a.objective, 40.0);
    Eigen::MatrixXd swap(2, 2);
    swap << 1, 5, 5, 1;
    auto b = PitAssign(swap, method);
    EXPECT_EQ(b.perm, (std::vector<size_t>{1, 0}));
    EXPECT_EQ(b.objective, 10.0);
  }
  EXPECT_THROW(PitAssign(Eigen::MatrixXd::Zero(2, 3)), InvalidArgument);
  Eigen::MatrixXd nan = Eigen::MatrixXd::Zero(2, 2);
  nan(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(PitAssign(nan), InvalidArgument);
}

TEST(PitAssign, HungarianMatchesBruteForce) {
  Rng rng(1234);
  for (int trial = 0; trial < 300; ++trial) {
    Eigen::Index S = 1 + Eigen::Index(rng.Below(6));
    Eigen::MatrixXd m(S, S);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m(i) = trial % 3 == 0 ? double(rng.Below(4)) : rng.Uniform(-30, 30);  // integer case has ties
    auto bf = PitAssign(m, PitMethod::kBruteForce), hu = PitAssign(m, PitMethod::kHungarian);
    std::vector<size_t> sorted = hu.perm;
    std::sort(sorted.begin(), sorted.end());
    for (size_t i = 0; i < sorted.size(); ++i) ASSERT_EQ(sorted[i], i);
    EXPECT_NEAR(hu.objective, bf.objective, 1e-12 * std::max(1.0, std::abs(bf.objective)));
  }
}

TEST(Sdri, Examples) {
  std::vector<Waveform> refs = {Sine(300, 8000, 1000, 0.4), Sine(700, 8000, 1000, 0.3, 1.0),
                                Sine(1100, 8000, 1000, 0.2, 2.0)};
  Waveform mix(std::vector<double>(1000, 0.0));
  for (const auto &r : refs)
    for (size_t i = 0; i < 1000; ++i) mix[i] += r[i];

  SdriResult base = Sdri({mix, mix, mix}, refs, mix);
  EXPECT_NEAR(base.mean, 0.0, 1e-12);

  SdriResult ideal = Sdri(refs, refs, mix);
  double mean_mix = 0.0;
  for (const auto &r : refs) mean_mix += SiSdr(mix, r) / 3.0;
  EXPECT_NEAR(ideal.mean, kSiSdrCap - mean_mix, 1e-9);
  EXPECT_GT(ideal.mean, 0.0);

  SdriResult shuffled = Sdri({refs[2], refs[0], refs[1]}, refs, mix);
  EXPECT_EQ(shuffled.improvement, ideal.improvement);
  EXPECT_EQ(shuffled.perm, (std::vector<size_t>{2, 0, 1}));

  EXPECT_THROW(Sdri({mix}, refs, mix), InvalidArgument);
}

}  // namespace
}  // namespace tastas
