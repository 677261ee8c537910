// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Minimal reverse-mode differentiation over dense double matrices. A Tape
// records values and backward closures in creation order; Backward() walks
// it in reverse. Nodes that depend on no trainable leaf record no closure,
// so frozen sub-networks cost a forward pass only.

#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tastas/error.hpp"

namespace tastas::ad {

using Mat = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;  // same shape as value once ZeroGrad() ran

  void ZeroGrad() { grad = Mat::Zero(value.rows(), value.cols()); }
};

class Tape;

struct Var {
  Tape *tape = nullptr;
  int id = -1;

  const Mat &value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
};

class Tape {
 public:
  // With record=false no backward closures are kept (inference).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var Constant(Mat m) { return Push(std::move(m), false, nullptr); }

  // A trainable parameter accumulates its gradient into p->grad on
  // Backward(); a non-trainable one is a constant.
  Var Param(Parameter *p, bool trainable) {
    Var v = Push(p->value, trainable && record_, nullptr);
    if (trainable && record_) nodes_[size_t(v.id)].param = p;
    return v;
  }

  const Mat &value(int id) const { return nodes_[size_t(id)].value; }
  bool requires_grad(int id) const { return nodes_[size_t(id)].requires_grad; }
  bool recording() const { return record_; }
  size_t size() const { return nodes_.size(); }

  // Creates a node. backward is kept only when some input needs a gradient.
  Var Push(Mat value, bool requires_grad, std::function<void(const Mat &)> backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && record_;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, int(nodes_.size()) - 1};
  }

  // Sets the closure of a node whose backward needs its own output value.
  void SetBackward(Var v, std::function<void(const Mat &)> backward) {
    Node &n = nodes_[size_t(v.id)];
    if (n.requires_grad) n.backward = std::move(backward);
  }

  void AccumulateGrad(int id, const Mat &g) {
    Node &n = nodes_[size_t(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = g;
    else n.grad += g;
  }

  // Seeds d(out)/d(out) = 1 for a 1x1 output and back-propagates into the
  // gradients of trainable parameters.
  void Backward(Var out) {
    if (out.tape != this) throw InvalidArgument("backward: variable from another tape");
    if (value(out.id).size() != 1) throw InvalidArgument("backward needs a scalar output");
    if (!requires_grad(out.id)) return;
    AccumulateGrad(out.id, Mat::Ones(1, 1));
    for (int i = out.id; i >= 0; --i) {
      Node &n = nodes_[size_t(i)];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(n.grad);
      if (n.param) {
        if (n.param->grad.size() == 0) n.param->ZeroGrad();
        n.param->grad += n.grad;
      }
      n.grad.resize(0, 0);
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(const Mat &)> backward;
    Parameter *param = nullptr;
  };
  bool record_;
  std::deque<Node> nodes_;
};

inline const Mat &Var::value() const { return tape->value(id); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

namespace internal {

inline void CheckSameTape(const Var &a, const Var &b) {
  if (a.tape != b.tape) throw InvalidArgument("variables from different tapes");
}

inline void CheckShape(bool ok, const char *op) {
  if (!ok) throw InvalidArgument(std::string("shape mismatch in ") + op);
}

}  // namespace internal

// ---- elementary ops

inline Var MatMul(Var a, Var b) {
  internal::CheckSameTape(a, b);
  internal::CheckShape(a.cols() == b.rows(), "MatMul");
  Tape *t = a.tape;
  const bool rg = a.requires_grad() || b.requires_grad();
  return t->Push(a.value() * b.value(), rg, [t, a, b](const Mat &g) {
    if (a.requires_grad()) t->AccumulateGrad(a.id, g * b.value().transpose());
    if (b.requires_grad()) t->AccumulateGrad(b.id, a.value().transpose() * g);
  });
}

inline Var Add(Var a, Var b) {
  internal::CheckSameTape(a, b);
  internal::CheckShape(a.rows() == b.rows() && a.cols() == b.cols(), "Add");
  Tape *t = a.tape;
  return t->Push(a.value() + b.value(), a.requires_grad() || b.requires_grad(), [t, a, b](const Mat &g) {
    t->AccumulateGrad(a.id, g);
    t->AccumulateGrad(b.id, g);
  });
}

inline Var Sub(Var a, Var b) {
  internal::CheckSameTape(a, b);
  internal::CheckShape(a.rows() == b.rows() && a.cols() == b.cols(), "Sub");
  Tape *t = a.tape;
  return t->Push(a.value() - b.value(), a.requires_grad() || b.requires_grad(), [t, a, b](const Mat &g) {
    t->AccumulateGrad(a.id, g);
    t->AccumulateGrad(b.id, -g);
  });
}

// Element-wise product.
inline Var Mul(Var a, Var b) {
  internal::CheckSameTape(a, b);
  internal::CheckShape(a.rows() == b.rows() && a.cols() == b.cols(), "Mul");
  Tape *t = a.tape;
  return t->Push(a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                 [t, a, b](const Mat &g) {
                   if (a.requires_grad()) t->AccumulateGrad(a.id, g.cwiseProduct(b.value()));
                   if (b.requires_grad()) t->AccumulateGrad(b.id, g.cwiseProduct(a.value()));
                 });
}

inline Var Scale(Var a, double c) {
  Tape *t = a.tape;
  return t->Push(a.value() * c, a.requires_grad(), [t, a, c](const Mat &g) { t->AccumulateGrad(a.id, g * c); });
}

// a + row, with row (1 x cols) broadcast over the rows of a.
inline Var AddRow(Var a, Var row) {
  internal::CheckSameTape(a, row);
  internal::CheckShape(row.rows() == 1 && row.cols() == a.cols(), "AddRow");
  Tape *t = a.tape;
  Mat out = a.value().rowwise() + row.value().row(0);
  return t->Push(std::move(out), a.requires_grad() || row.requires_grad(), [t, a, row](const Mat &g) {
    t->AccumulateGrad(a.id, g);
    if (row.requires_grad()) t->AccumulateGrad(row.id, g.colwise().sum());
  });
}

namespace internal {

// y = f(x) element-wise; dydx(x, y) gives the local derivative.
template <typename F, typename D>
Var Elementwise(Var a, F f, D dydx) {
  Tape *t = a.tape;
  Var out = t->Push(a.value().unaryExpr(f), a.requires_grad(), nullptr);
  t->SetBackward(out, [t, a, out, dydx](const Mat &g) {
    t->AccumulateGrad(a.id, g.cwiseProduct(a.value().binaryExpr(out.value(), dydx)));
  });
  return out;
}

}  // namespace internal

inline Var Sigmoid(Var a) {
  return internal::Elementwise(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var Tanh(Var a) {
  return internal::Elementwise(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var Relu(Var a) {
  return internal::Elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// Columns [start, start + n).
inline Var SliceCols(Var a, Eigen::Index start, Eigen::Index n) {
  internal::CheckShape(start >= 0 && n >= 0 && start + n <= a.cols(), "SliceCols");
  Tape *t = a.tape;
  return t->Push(a.value().middleCols(start, n), a.requires_grad(), [t, a, start, n](const Mat &g) {
    Mat full = Mat::Zero(a.rows(), a.cols());
    full.middleCols(start, n) = g;
    t->AccumulateGrad(a.id, full);
  });
}

inline Var ConcatCols(const std::vector<Var> &parts) {
  if (parts.empty()) throw InvalidArgument("ConcatCols of nothing");
  Tape *t = parts[0].tape;
  Eigen::Index rows = parts[0].rows(), cols = 0;
  bool rg = false;
  for (const Var &p : parts) {
    internal::CheckSameTape(parts[0], p);
    internal::CheckShape(p.rows() == rows, "ConcatCols");
    cols += p.cols();
    rg = rg || p.requires_grad();
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const Var &p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t->Push(std::move(out), rg, [t, parts](const Mat &g) {
    Eigen::Index c = 0;
    for (const Var &p : parts) {
      if (p.requires_grad()) t->AccumulateGrad(p.id, g.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

inline Var ConcatRows(const std::vector<Var> &parts) {
  if (parts.empty()) throw InvalidArgument("ConcatRows of nothing");
  Tape *t = parts[0].tape;
  Eigen::Index cols = parts[0].cols(), rows = 0;
  bool rg = false;
  for (const Var &p : parts) {
    internal::CheckSameTape(parts[0], p);
    internal::CheckShape(p.cols() == cols, "ConcatRows");
    rows += p.rows();
    rg = rg || p.requires_grad();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const Var &p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t->Push(std::move(out), rg, [t, parts](const Mat &g) {
    Eigen::Index r = 0;
    for (const Var &p : parts) {
      if (p.requires_grad()) t->AccumulateGrad(p.id, g.middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

// out.row(i) = a.row(index[i]), or zeros where index[i] < 0.
inline Var GatherRows(Var a, std::vector<int> index) {
  Tape *t = a.tape;
  Mat out(Eigen::Index(index.size()), a.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.rows()) throw InvalidArgument("GatherRows: index out of range");
    if (index[i] < 0) out.row(Eigen::Index(i)).setZero();
    else out.row(Eigen::Index(i)) = a.value().row(index[i]);
  }
  return t->Push(std::move(out), a.requires_grad(), [t, a, index = std::move(index)](const Mat &g) {
    Mat ga = Mat::Zero(a.rows(), a.cols());
    for (size_t i = 0; i < index.size(); ++i)
      if (index[i] >= 0) ga.row(index[i]) += g.row(Eigen::Index(i));
    t->AccumulateGrad(a.id, ga);
  });
}

// out.row(r) = mean of a.row(i) over i with index[i] == r; rows with no
// contributor are zero. The adjoint of a gather followed by averaging.
inline Var ScatterRowsMean(Var a, const std::vector<int> &index, Eigen::Index out_rows) {
  internal::CheckShape(Eigen::Index(index.size()) == a.rows(), "ScatterRowsMean");
  Tape *t = a.tape;
  std::vector<double> count(size_t(out_rows), 0.0);
  for (int r : index) {
    if (r >= out_rows) throw InvalidArgument("ScatterRowsMean: index out of range");
    if (r >= 0) count[size_t(r)] += 1.0;
  }
  Mat out = Mat::Zero(out_rows, a.cols());
  for (size_t i = 0; i < index.size(); ++i)
    if (index[i] >= 0) out.row(index[i]) += a.value().row(Eigen::Index(i));
  for (Eigen::Index r = 0; r < out_rows; ++r)
    if (count[size_t(r)] > 0) out.row(r) /= count[size_t(r)];
  return t->Push(std::move(out), a.requires_grad(), [t, a, index, count](const Mat &g) {
    Mat ga = Mat::Zero(a.rows(), a.cols());
    for (size_t i = 0; i < index.size(); ++i)
      if (index[i] >= 0) ga.row(Eigen::Index(i)) = g.row(index[i]) / count[size_t(index[i])];
    t->AccumulateGrad(a.id, ga);
  });
}

// Splits a column signal (T x 1) into n_frames rows of `len` samples at
// stride `hop`; samples past the end read as zero.
inline Var FrameSignal(Var x, Eigen::Index len, Eigen::Index hop, Eigen::Index n_frames) {
  internal::CheckShape(x.cols() == 1, "FrameSignal");
  Tape *t = x.tape;
  const Eigen::Index T = x.rows();
  Mat out = Mat::Zero(n_frames, len);
  for (Eigen::Index f = 0; f < n_frames; ++f)
    for (Eigen::Index i = 0; i < len; ++i) {
      Eigen::Index s = f * hop + i;
      if (s < T) out(f, i) = x.value()(s, 0);
    }
  return t->Push(std::move(out), x.requires_grad(), [t, x, len, hop, n_frames, T](const Mat &g) {
    Mat gx = Mat::Zero(T, 1);
    for (Eigen::Index f = 0; f < n_frames; ++f)
      for (Eigen::Index i = 0; i < len; ++i) {
        Eigen::Index s = f * hop + i;
        if (s < T) gx(s, 0) += g(f, i);
      }
    t->AccumulateGrad(x.id, gx);
  });
}

// Sums frames (rows) at stride hop into a column of out_len samples;
// samples beyond out_len are dropped.
inline Var OverlapAdd(Var frames, Eigen::Index hop, Eigen::Index out_len) {
  Tape *t = frames.tape;
  const Eigen::Index n = frames.rows(), len = frames.cols();
  Mat out = Mat::Zero(out_len, 1);
  for (Eigen::Index f = 0; f < n; ++f)
    for (Eigen::Index i = 0; i < len; ++i) {
      Eigen::Index s = f * hop + i;
      if (s < out_len) out(s, 0) += frames.value()(f, i);
    }
  return t->Push(std::move(out), frames.requires_grad(), [t, frames, hop, n, len, out_len](const Mat &g) {
    Mat gf = Mat::Zero(n, len);
    for (Eigen::Index f = 0; f < n; ++f)
      for (Eigen::Index i = 0; i < len; ++i) {
        Eigen::Index s = f * hop + i;
        if (s < out_len) gf(f, i) = g(s, 0);
      }
    t->AccumulateGrad(frames.id, gf);
  });
}

// Normalises the whole matrix to zero mean and unit variance, then applies a
// per-column affine: gamma * (x - mu) / sqrt(var + eps) + beta.
inline Var GlobalLayerNorm(Var x, Var gamma, Var beta, double eps = 1e-8) {
  internal::CheckShape(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.rows() == 1 &&
                           beta.cols() == x.cols(),
                       "GlobalLayerNorm");
  Tape *t = x.tape;
  const double n = double(x.value().size());
  const double mu = x.value().mean();
  const double var = (x.value().array() - mu).square().sum() / n;
  const double inv_std = 1.0 / std::sqrt(var + eps);
  Mat xhat = (x.value().array() - mu) * inv_std;
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return t->Push(std::move(out), rg, [t, x, gamma, beta, xhat, inv_std, n](const Mat &g) {
    if (gamma.requires_grad()) t->AccumulateGrad(gamma.id, g.cwiseProduct(xhat).colwise().sum());
    if (beta.requires_grad()) t->AccumulateGrad(beta.id, g.colwise().sum());
    if (x.requires_grad()) {
      Mat gh = g.array().rowwise() * gamma.value().row(0).array();
      const double mean_gh = gh.sum() / n;
      const double mean_ghx = gh.cwiseProduct(xhat).sum() / n;
      Mat gx = ((gh.array() - mean_gh) - xhat.array() * mean_ghx) * inv_std;
      t->AccumulateGrad(x.id, gx);
    }
  });
}

// Column means as a 1 x cols row.
inline Var MeanRows(Var a) {
  Tape *t = a.tape;
  const Eigen::Index rows = a.rows();
  return t->Push(a.value().colwise().mean(), a.requires_grad(), [t, a, rows](const Mat &g) {
    t->AccumulateGrad(a.id, g.replicate(rows, 1) / double(rows));
  });
}

// Repeats a 1 x cols row n times.
inline Var BroadcastRows(Var row, Eigen::Index n) {
  internal::CheckShape(row.rows() == 1, "BroadcastRows");
  Tape *t = row.tape;
  return t->Push(row.value().replicate(n, 1), row.requires_grad(),
                 [t, row](const Mat &g) { t->AccumulateGrad(row.id, g.colwise().sum()); });
}

// Each row divided by its Euclidean norm.
inline Var L2NormalizeRows(Var a, double eps = 1e-12) {
  Tape *t = a.tape;
  Eigen::VectorXd norms = a.value().rowwise().norm().array().max(eps);
  Mat y = a.value().array().colwise() / norms.array();
  Var out = t->Push(std::move(y), a.requires_grad(), nullptr);
  t->SetBackward(out, [t, a, out, norms](const Mat &g) {
    const Mat &y = out.value();
    Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Mat ga = (g - (y.array().colwise() * dots.array()).matrix()).array().colwise() / norms.array();
    t->AccumulateGrad(a.id, ga);
  });
  return out;
}

inline Var Sum(Var a) {
  Tape *t = a.tape;
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return t->Push(std::move(out), a.requires_grad(), [t, a](const Mat &g) {
    t->AccumulateGrad(a.id, Mat::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

// Custom scalar function of one input with a precomputed gradient.
inline Var ScalarWithGrad(Var a, double value, Mat grad) {
  Tape *t = a.tape;
  Mat out(1, 1);
  out(0, 0) = value;
  return t->Push(std::move(out), a.requires_grad(), [t, a, grad = std::move(grad)](const Mat &g) {
    t->AccumulateGrad(a.id, grad * g(0, 0));
  });
}

// Mean softmax cross-entropy of logit rows against integer labels.
inline Var SoftmaxCrossEntropy(Var logits, const std::vector<int> &labels) {
  internal::CheckShape(Eigen::Index(labels.size()) == logits.rows(), "SoftmaxCrossEntropy");
  const Mat &z = logits.value();
  Mat prob(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double m = z.row(i).maxCoeff();
    Eigen::RowVectorXd e = (z.row(i).array() - m).exp();
    double s = e.sum();
    prob.row(i) = e / s;
    loss += -(z(i, labels[size_t(i)]) - m - std::log(s));
  }
  const double n = double(z.rows());
  Mat grad = prob;
  for (Eigen::Index i = 0; i < z.rows(); ++i) grad(i, labels[size_t(i)]) -= 1.0;
  return ScalarWithGrad(logits, loss / n, grad / n);
}

}  // namespace tastas::ad
