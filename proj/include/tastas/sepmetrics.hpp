// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Separation metrics and oracles: STFT/ISTFT, ideal ratio masks, SI-SDR,
// permutation assignment (exhaustive and Hungarian) and SDR improvement.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "tastas/audio.hpp"
#include "tastas/error.hpp"

namespace tastas {

struct StftParams {
  size_t frame_len = 256;
  size_t hop = 128;
};

// Complex grid (frame x bin) plus what is needed to invert it to the
// original length. Frames are centred: the signal is padded by frame_len/2
// on the left and zero-extended on the right to a whole number of hops.
struct TFRepresentation {
  Eigen::MatrixXcd grid;
  size_t frame_len = 0;
  size_t hop = 0;
  std::string window;
  size_t num_samples = 0;
  int sample_rate = kDefaultSampleRate;

  Eigen::Index frames() const { return grid.rows(); }
  Eigen::Index bins() const { return grid.cols(); }
};

namespace internal {

inline bool IsPowerOfTwo(size_t n) { return n > 0 && (n & (n - 1)) == 0; }

// Periodic Hann.
inline std::vector<double> HannWindow(size_t n) {
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
  return w;
}

inline size_t StftFrameCount(size_t num_samples, size_t frame_len, size_t hop) {
  size_t total = num_samples + frame_len;  // frame_len/2 on each side
  if (total <= frame_len) return 1;
  return 1 + (total - frame_len + hop - 1) / hop;
}

}  // namespace internal

inline TFRepresentation Stft(const Waveform &w, const StftParams &p = {}) {
  if (!internal::IsPowerOfTwo(p.frame_len)) throw InvalidArgument("stft frame length must be a power of two");
  if (p.hop == 0 || p.hop > p.frame_len) throw InvalidArgument("stft hop must be in (0, frame_len]");
  const size_t n = p.frame_len, pad = n / 2;
  const size_t frames = internal::StftFrameCount(w.size(), n, p.hop);
  const auto window = internal::HannWindow(n);

  TFRepresentation tf;
  tf.frame_len = n;
  tf.hop = p.hop;
  tf.window = "hann";
  tf.num_samples = w.size();
  tf.sample_rate = w.sample_rate;
  tf.grid.resize(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(n / 2 + 1));

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(n);
  std::vector<std::complex<double>> spec;
  for (size_t t = 0; t < frames; ++t) {
    for (size_t i = 0; i < n; ++i) {
      long idx = long(t * p.hop + i) - long(pad);
      double x = (idx >= 0 && size_t(idx) < w.size()) ? w[size_t(idx)] : 0.0;
      frame[i] = x * window[i];
    }
    fft.fwd(spec, frame);
    for (size_t k = 0; k <= n / 2; ++k) tf.grid(Eigen::Index(t), Eigen::Index(k)) = spec[k];
  }
  return tf;
}

// Weighted overlap-add with squared-window normalisation.
inline Waveform Istft(const TFRepresentation &tf) {
  if (tf.frame_len == 0 || tf.hop == 0 || tf.window != "hann")
    throw FormatError("istft: missing or unsupported metadata");
  const size_t n = tf.frame_len, pad = n / 2, frames = size_t(tf.frames());
  if (tf.bins() != Eigen::Index(n / 2 + 1)) throw FormatError("istft: bin count disagrees with frame length");
  const auto window = internal::HannWindow(n);
  const size_t total = (frames - 1) * tf.hop + n;
  std::vector<double> acc(total, 0.0), wsum(total, 0.0);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> spec(n / 2 + 1);
  std::vector<double> frame;
  for (size_t t = 0; t < frames; ++t) {
    for (size_t k = 0; k <= n / 2; ++k) spec[k] = tf.grid(Eigen::Index(t), Eigen::Index(k));
    fft.inv(frame, spec);
    for (size_t i = 0; i < n; ++i) {
      acc[t * tf.hop + i] += frame[i] * window[i];
      wsum[t * tf.hop + i] += window[i] * window[i];
    }
  }
  Waveform out(std::vector<double>(tf.num_samples, 0.0), tf.sample_rate);
  for (size_t i = 0; i < tf.num_samples && i + pad < total; ++i) {
    double d = wsum[i + pad];
    out[i] = d > 1e-10 ? acc[i + pad] / d : 0.0;
  }
  return out;
}

// Per-source masks M_s = |X_s| / sum_s |X_s|; bins where the denominator
// is zero get 1/S for every source.
struct MaskSet {
  std::vector<Eigen::MatrixXd> masks;
};

inline MaskSet IdealRatioMasks(const std::vector<Eigen::MatrixXd> &source_mags) {
  if (source_mags.empty()) throw InvalidArgument("ideal ratio masks need at least one source");
  const auto rows = source_mags[0].rows(), cols = source_mags[0].cols();
  Eigen::MatrixXd denom = Eigen::MatrixXd::Zero(rows, cols);
  for (const auto &m : source_mags) {
    if (m.rows() != rows || m.cols() != cols) throw InvalidArgument("ideal ratio masks: shape mismatch");
    if ((m.array() < 0.0).any()) throw InvalidArgument("ideal ratio masks: negative magnitude");
    denom += m;
  }
  const double uniform = 1.0 / double(source_mags.size());
  MaskSet out;
  for (const auto &m : source_mags) {
    Eigen::MatrixXd mask(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        mask(i, j) = denom(i, j) > 0.0 ? m(i, j) / denom(i, j) : uniform;
    out.masks.push_back(std::move(mask));
  }
  return out;
}

// istft(M_s * Y) for each source, with M_s the ideal ratio mask.
inline std::vector<Waveform> OracleIrmSeparate(const Waveform &mixture, const std::vector<Waveform> &sources,
                                               const StftParams &p = {}) {
  for (const auto &s : sources)
    if (s.size() != mixture.size()) throw InvalidArgument("oracle separation: length mismatch");
  TFRepresentation y = Stft(mixture, p);
  std::vector<Eigen::MatrixXd> mags;
  for (const auto &s : sources) mags.push_back(Stft(s, p).grid.cwiseAbs());
  MaskSet ms = IdealRatioMasks(mags);
  std::vector<Waveform> out;
  for (const auto &m : ms.masks) {
    TFRepresentation est = y;
    est.grid = y.grid.cwiseProduct(m.cast<std::complex<double>>());
    out.push_back(Istft(est));
  }
  return out;
}

// ---- SI-SDR

inline constexpr double kSiSdrCap = 100.0;

namespace internal {

inline std::vector<double> ZeroMean(const std::vector<double> &x) {
  double mean = std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] - mean;
  return y;
}

}  // namespace internal

// SI-SDR in dB after mean removal, clamped to +-100 dB. When grad is
// non-null it receives d(SI-SDR)/d(est), zero where the clamp is active.
inline double SiSdr(const std::vector<double> &est, const std::vector<double> &ref,
                    std::vector<double> *grad = nullptr) {
  if (est.size() != ref.size() || est.empty()) throw InvalidArgument("si_sdr: length mismatch");
  auto e0 = internal::ZeroMean(est), r = internal::ZeroMean(ref);
  double rr = 0.0, er = 0.0, raw = 0.0;
  for (size_t i = 0; i < r.size(); ++i) {
    rr += r[i] * r[i];
    er += e0[i] * r[i];
    raw += ref[i] * ref[i];
  }
  // a constant reference leaves only rounding noise after mean removal
  if (!(rr > 1e-20 * raw)) throw InvalidArgument("si_sdr: zero-power reference");
  const double alpha = er / rr;
  std::vector<double> target(r.size()), resid(r.size());
  double tt = 0.0, nn = 0.0;
  for (size_t i = 0; i < r.size(); ++i) {
    target[i] = alpha * r[i];
    resid[i] = e0[i] - target[i];
    tt += target[i] * target[i];
    nn += resid[i] * resid[i];
  }
  if (grad) grad->assign(est.size(), 0.0);
  if (!(tt > 0.0)) return -kSiSdrCap;
  if (!(nn > 0.0)) return kSiSdrCap;
  double value = 10.0 * std::log10(tt / nn);
  if (value >= kSiSdrCap) return kSiSdrCap;
  if (value <= -kSiSdrCap) return -kSiSdrCap;
  if (grad) {
    const double k = 20.0 / std::numbers::ln10;
    for (size_t i = 0; i < r.size(); ++i) (*grad)[i] = k * (target[i] / tt - resid[i] / nn);
  }
  return value;
}

inline double SiSdr(const Waveform &est, const Waveform &ref) { return SiSdr(est.samples, ref.samples); }

// ---- permutation assignment

// perm[i] is the reference index assigned to estimate i; objective is
// sum_i score(i, perm[i]) accumulated in increasing i.
struct PermutationAssignment {
  std::vector<size_t> perm;
  double objective = 0.0;
};

enum class PitMethod { kBruteForce, kHungarian };

namespace internal {

inline void CheckScoreMatrix(const Eigen::MatrixXd &score) {
  if (score.rows() != score.cols() || score.rows() == 0) throw InvalidArgument("pit: score matrix must be square");
  if (!score.allFinite()) throw InvalidArgument("pit: non-finite score");
}

inline double AssignmentObjective(const Eigen::MatrixXd &score, const std::vector<size_t> &perm) {
  double acc = 0.0;
  for (size_t i = 0; i < perm.size(); ++i) acc += score(Eigen::Index(i), Eigen::Index(perm[i]));
  return acc;
}

// Shortest augmenting path Hungarian algorithm (minimisation, 1-based
// potentials), O(n^3).
inline std::vector<size_t> HungarianMin(const Eigen::MatrixXd &cost) {
  const size_t n = size_t(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<size_t> p(n + 1, 0), way(n + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    p[0] = i;
    size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      size_t i0 = p[j0], j1 = 0;
      double delta = inf;
      for (size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(Eigen::Index(i0 - 1), Eigen::Index(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<size_t> perm(n);
  for (size_t j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
  return perm;
}

}  // namespace internal

// Maximises sum_i score(i, perm[i]).
inline PermutationAssignment PitAssign(const Eigen::MatrixXd &score, PitMethod method = PitMethod::kHungarian) {
  internal::CheckScoreMatrix(score);
  const size_t n = size_t(score.rows());
  PermutationAssignment best;
  if (method == PitMethod::kHungarian) {
    best.perm = internal::HungarianMin(-score);
    best.objective = internal::AssignmentObjective(score, best.perm);
    return best;
  }
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  best.objective = -std::numeric_limits<double>::infinity();
  do {
    double v = internal::AssignmentObjective(score, perm);
    if (v > best.objective) {
      best.objective = v;
      best.perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// score(i, j) = SI-SDR(estimate i, reference j).
inline Eigen::MatrixXd SiSdrMatrix(const std::vector<Waveform> &estimates, const std::vector<Waveform> &references) {
  const auto S = Eigen::Index(references.size());
  Eigen::MatrixXd m(S, S);
  for (Eigen::Index i = 0; i < S; ++i)
    for (Eigen::Index j = 0; j < S; ++j) m(i, j) = SiSdr(estimates[size_t(i)], references[size_t(j)]);
  return m;
}

struct SdriResult {
  std::vector<size_t> perm;          // estimate -> reference
  std::vector<double> si_sdr;        // per reference, of its assigned estimate
  std::vector<double> mixture_si_sdr;  // per reference
  std::vector<double> improvement;   // per reference
  double mean = 0.0;
};

// SI-SDR improvement under the PIT-optimal pairing.
inline SdriResult Sdri(const std::vector<Waveform> &estimates, const std::vector<Waveform> &references,
                       const Waveform &mixture) {
  if (estimates.size() != references.size() || references.empty())
    throw InvalidArgument("sdri: estimate/reference count mismatch");
  for (size_t i = 0; i < references.size(); ++i)
    if (estimates[i].size() != mixture.size() || references[i].size() != mixture.size())
      throw InvalidArgument("sdri: length mismatch");
  Eigen::MatrixXd score = SiSdrMatrix(estimates, references);
  SdriResult r;
  r.perm = PitAssign(score).perm;
  const size_t S = references.size();
  r.si_sdr.resize(S);
  r.mixture_si_sdr.resize(S);
  r.improvement.resize(S);
  for (size_t i = 0; i < S; ++i) {
    size_t j = r.perm[i];
    r.si_sdr[j] = score(Eigen::Index(i), Eigen::Index(j));
  }
  for (size_t j = 0; j < S; ++j) {
    r.mixture_si_sdr[j] = SiSdr(mixture, references[j]);
    r.improvement[j] = r.si_sdr[j] - r.mixture_si_sdr[j];
    r.mean += r.improvement[j];
  }
  r.mean /= double(S);
  return r;
}

}  // namespace tastas
