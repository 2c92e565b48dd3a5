#pragma once
// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation applied to its nodes. Parameters enter the
// tape as leaves that alias their storage; gradients of leaves accumulate
// directly into Param::grad so several tapes (or several uses on one tape)
// sum naturally. Operations are free functions taking the tape first.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bilink/error.hpp"

namespace bilink::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Param {
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(const Matrix<T>& grad_out)>;

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Var constant(Matrix<T> value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, {}, false});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var leaf(Param<T>& p) {
    // Eval tapes never touch the parameter, so encoders can be shared by readers.
    if (record_ && (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())) p.zero_grad();
    nodes_.push_back(Node{{}, {}, &p, {}, record_});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // Registers an op result. `backward` is dropped when not recording or when no
  // input needs a gradient.
  Var push(Matrix<T> value, bool needs_grad, Backward backward) {
    const bool keep = record_ && needs_grad;
    nodes_.push_back(Node{std::move(value), {}, nullptr, keep ? std::move(backward) : Backward{}, keep});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix<T>& value(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.param ? n.param->value : n.value;
  }

  T scalar(Var v) const { return value(v)(0, 0); }

  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  Matrix<T>& grad(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.param) return n.param->grad;
    const Matrix<T>& val = n.value;
    if (n.grad.rows() != val.rows() || n.grad.cols() != val.cols()) n.grad.setZero(val.rows(), val.cols());
    return n.grad;
  }

  // Seeds d(loss)/d(loss) = 1 for a 1x1 node and propagates to every leaf.
  void backward(Var loss) {
    if (!record_) throw Error(ErrorKind::kPrecondition, "backward on a non-recording tape");
    grad(loss).setOnes();
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Param<T>* param = nullptr;
    Backward backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool record_;
};

// ---------------------------------------------------------------------------
// Elementwise and structural ops.

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  Matrix<T> out = tape.value(a) + tape.value(b);
  const bool ng = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), ng, [&tape, a, b](const Matrix<T>& g) {
    if (tape.requires_grad(a)) tape.grad(a) += g;
    if (tape.requires_grad(b)) tape.grad(b) += g;
  });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  Matrix<T> out = tape.value(a) - tape.value(b);
  const bool ng = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), ng, [&tape, a, b](const Matrix<T>& g) {
    if (tape.requires_grad(a)) tape.grad(a) += g;
    if (tape.requires_grad(b)) tape.grad(b) -= g;
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T s) {
  Matrix<T> out = tape.value(a) * s;
  return tape.push(std::move(out), tape.requires_grad(a), [&tape, a, s](const Matrix<T>& g) {
    tape.grad(a) += g * s;
  });
}

// a (n x m) + b (1 x m) broadcast over rows.
template <typename T>
Var add_row(Tape<T>& tape, Var a, Var b) {
  Matrix<T> out = tape.value(a);
  out.rowwise() += tape.value(b).row(0);
  const bool ng = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), ng, [&tape, a, b](const Matrix<T>& g) {
    if (tape.requires_grad(a)) tape.grad(a) += g;
    if (tape.requires_grad(b)) tape.grad(b) += g.colwise().sum();
  });
}

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  Matrix<T> out;
  out.noalias() = tape.value(a) * tape.value(b);
  const bool ng = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), ng, [&tape, a, b](const Matrix<T>& g) {
    if (tape.requires_grad(a)) tape.grad(a).noalias() += g * tape.value(b).transpose();
    if (tape.requires_grad(b)) tape.grad(b).noalias() += tape.value(a).transpose() * g;
  });
}

// a * b^T
template <typename T>
Var matmul_nt(Tape<T>& tape, Var a, Var b) {
  Matrix<T> out;
  out.noalias() = tape.value(a) * tape.value(b).transpose();
  const bool ng = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), ng, [&tape, a, b](const Matrix<T>& g) {
    if (tape.requires_grad(a)) tape.grad(a).noalias() += g * tape.value(b);
    if (tape.requires_grad(b)) tape.grad(b).noalias() += g.transpose() * tape.value(a);
  });
}

// x W + b, with b a 1 x m row.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  return add_row(tape, matmul(tape, x, w), b);
}

// Tanh-approximated GELU; smooth, which keeps finite-difference checks clean.
template <typename T>
Var gelu(Tape<T>& tape, Var a) {
  const Matrix<T>& x = tape.value(a);
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T k = static_cast<T>(0.044715);
  Matrix<T> th = (c * (x.array() + k * x.array().cube())).tanh().matrix();
  Matrix<T> out = (static_cast<T>(0.5) * x.array() * (1 + th.array())).matrix();
  return tape.push(std::move(out), tape.requires_grad(a), [&tape, a, th = std::move(th), c, k](const Matrix<T>& g) {
    const auto& x = tape.value(a).array();
    auto dinner = c * (1 + 3 * k * x.square());
    auto d = static_cast<T>(0.5) * (1 + th.array()) + static_cast<T>(0.5) * x * (1 - th.array().square()) * dinner;
    tape.grad(a).array() += g.array() * d;
  });
}

template <typename T>
Var tanh(Tape<T>& tape, Var a) {
  Matrix<T> out = tape.value(a).array().tanh().matrix();
  return tape.push(out, tape.requires_grad(a), [&tape, a, out](const Matrix<T>& g) {
    tape.grad(a).array() += g.array() * (1 - out.array().square());
  });
}

// Row-wise layer normalisation with gain and bias rows (1 x d).
template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps = static_cast<T>(1e-5)) {
  const Matrix<T>& in = tape.value(x);
  const Eigen::Index n = in.rows(), d = in.cols();
  Matrix<T> xhat(n, d);
  std::vector<T> inv_std(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = in.row(i).mean();
    auto centered = in.row(i).array() - mu;
    const T var = centered.square().mean();
    const T is = 1 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    xhat.row(i) = centered * is;
  }
  Matrix<T> out = xhat;
  out.array().rowwise() *= tape.value(gamma).row(0).array();
  out.rowwise() += tape.value(beta).row(0);
  const bool ng = tape.requires_grad(x) || tape.requires_grad(gamma) || tape.requires_grad(beta);
  return tape.push(std::move(out), ng,
                   [&tape, x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Matrix<T>& g) {
                     if (tape.requires_grad(gamma)) tape.grad(gamma) += (g.array() * xhat.array()).colwise().sum().matrix();
                     if (tape.requires_grad(beta)) tape.grad(beta) += g.colwise().sum();
                     if (!tape.requires_grad(x)) return;
                     Matrix<T> gx = g;
                     gx.array().rowwise() *= tape.value(gamma).row(0).array();
                     Matrix<T>& dst = tape.grad(x);
                     for (Eigen::Index i = 0; i < gx.rows(); ++i) {
                       const T m1 = gx.row(i).mean();
                       const T m2 = gx.row(i).dot(xhat.row(i)) / static_cast<T>(gx.cols());
                       dst.row(i).array() +=
                           inv_std[static_cast<std::size_t>(i)] * (gx.row(i).array() - m1 - xhat.row(i).array() * m2);
                     }
                   });
}

// Row softmax over columns whose key_mask entry is nonzero; masked columns get
// probability exactly 0. Rows with no unmasked column are all zero.
template <typename T>
Var masked_softmax_rows(Tape<T>& tape, Var a, std::span<const std::uint8_t> key_mask) {
  const Matrix<T>& x = tape.value(a);
  Matrix<T> out = Matrix<T>::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (key_mask[static_cast<std::size_t>(j)]) mx = std::max(mx, x(i, j));
    if (!std::isfinite(mx)) continue;
    T sum = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (!key_mask[static_cast<std::size_t>(j)]) continue;
      out(i, j) = std::exp(x(i, j) - mx);
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return tape.push(out, tape.requires_grad(a), [&tape, a, out](const Matrix<T>& g) {
    Matrix<T>& dst = tape.grad(a);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const T dotp = g.row(i).dot(out.row(i));
      dst.row(i).array() += out.row(i).array() * (g.row(i).array() - dotp);
    }
  });
}

// A contiguous run of rows forming one sequence in a stacked batch.
struct Segment {
  Eigen::Index start = 0;
  Eigen::Index length = 0;
};

// Scaled dot-product attention over stacked sequences. q, k, v are N x d with
// N the total row count; each segment attends only within itself, each head
// over its own d/heads columns, and keys with key_mask 0 get weight 0.
template <typename T>
Var multi_head_attention(Tape<T>& tape, Var q, Var k, Var v, std::vector<Segment> segments, int heads,
                         std::span<const std::uint8_t> key_mask) {
  const Matrix<T>& Q = tape.value(q);
  const Matrix<T>& K = tape.value(k);
  const Matrix<T>& V = tape.value(v);
  const Eigen::Index d = Q.cols();
  const Eigen::Index dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Matrix<T> out(Q.rows(), d);
  std::vector<Matrix<T>> probs;
  probs.reserve(segments.size() * static_cast<std::size_t>(heads));
  for (const Segment& s : segments) {
    for (int h = 0; h < heads; ++h) {
      Matrix<T> p;
      p.noalias() = Q.block(s.start, h * dh, s.length, dh) * K.block(s.start, h * dh, s.length, dh).transpose();
      p *= scale;
      for (Eigen::Index j = 0; j < s.length; ++j)
        if (!key_mask[static_cast<std::size_t>(s.start + j)]) p.col(j).setConstant(-std::numeric_limits<T>::infinity());
      for (Eigen::Index i = 0; i < s.length; ++i) {
        const T mx = p.row(i).maxCoeff();
        if (!std::isfinite(mx)) {
          p.row(i).setZero();
          continue;
        }
        p.row(i) = (p.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
      }
      out.block(s.start, h * dh, s.length, dh).noalias() = p * V.block(s.start, h * dh, s.length, dh);
      probs.push_back(std::move(p));
    }
  }
  const bool ng = tape.requires_grad(q) || tape.requires_grad(k) || tape.requires_grad(v);
  return tape.push(std::move(out), ng,
                   [&tape, q, k, v, segments = std::move(segments), heads, dh, scale,
                    probs = std::move(probs)](const Matrix<T>& g) {
                     const Matrix<T>& Q = tape.value(q);
                     const Matrix<T>& K = tape.value(k);
                     const Matrix<T>& V = tape.value(v);
                     const bool gq = tape.requires_grad(q), gk = tape.requires_grad(k), gv = tape.requires_grad(v);
                     Matrix<T> dp, ds;
                     std::size_t idx = 0;
                     for (const Segment& s : segments) {
                       for (int h = 0; h < heads; ++h, ++idx) {
                         const Matrix<T>& p = probs[idx];
                         const auto go = g.block(s.start, h * dh, s.length, dh);
                         if (gv) tape.grad(v).block(s.start, h * dh, s.length, dh).noalias() += p.transpose() * go;
                         if (!gq && !gk) continue;
                         dp.noalias() = go * V.block(s.start, h * dh, s.length, dh).transpose();
                         ds = p.cwiseProduct(dp);
                         for (Eigen::Index i = 0; i < s.length; ++i) ds.row(i) -= p.row(i) * ds.row(i).sum();
                         ds *= scale;
                         if (gq)
                           tape.grad(q).block(s.start, h * dh, s.length, dh).noalias() +=
                               ds * K.block(s.start, h * dh, s.length, dh);
                         if (gk)
                           tape.grad(k).block(s.start, h * dh, s.length, dh).noalias() +=
                               ds.transpose() * Q.block(s.start, h * dh, s.length, dh);
                       }
                     }
                   });
}

template <typename T>
Var slice_cols(Tape<T>& tape, Var a, Eigen::Index start, Eigen::Index count) {
  Matrix<T> out = tape.value(a).middleCols(start, count);
  return tape.push(std::move(out), tape.requires_grad(a), [&tape, a, start, count](const Matrix<T>& g) {
    tape.grad(a).middleCols(start, count) += g;
  });
}

template <typename T>
Var slice_rows(Tape<T>& tape, Var a, Eigen::Index start, Eigen::Index count) {
  Matrix<T> out = tape.value(a).middleRows(start, count);
  return tape.push(std::move(out), tape.requires_grad(a), [&tape, a, start, count](const Matrix<T>& g) {
    tape.grad(a).middleRows(start, count) += g;
  });
}

template <typename T>
Var concat_cols(Tape<T>& tape, const std::vector<Var>& parts) {
  Eigen::Index rows = tape.value(parts.front()).rows(), cols = 0;
  bool ng = false;
  for (Var p : parts) {
    cols += tape.value(p).cols();
    ng = ng || tape.requires_grad(p);
  }
  Matrix<T> out(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    out.middleCols(c, tape.value(p).cols()) = tape.value(p);
    c += tape.value(p).cols();
  }
  return tape.push(std::move(out), ng, [&tape, parts](const Matrix<T>& g) {
    Eigen::Index c = 0;
    for (Var p : parts) {
      const Eigen::Index w = tape.value(p).cols();
      if (tape.requires_grad(p)) tape.grad(p) += g.middleCols(c, w);
      c += w;
    }
  });
}

template <typename T>
Var concat_rows(Tape<T>& tape, const std::vector<Var>& parts) {
  Eigen::Index cols = tape.value(parts.front()).cols(), rows = 0;
  bool ng = false;
  for (Var p : parts) {
    rows += tape.value(p).rows();
    ng = ng || tape.requires_grad(p);
  }
  Matrix<T> out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, tape.value(p).rows()) = tape.value(p);
    r += tape.value(p).rows();
  }
  return tape.push(std::move(out), ng, [&tape, parts](const Matrix<T>& g) {
    Eigen::Index r = 0;
    for (Var p : parts) {
      const Eigen::Index h = tape.value(p).rows();
      if (tape.requires_grad(p)) tape.grad(p) += g.middleRows(r, h);
      r += h;
    }
  });
}

// Rows of `table` selected by ids; an id of -1 yields a zero row.
template <typename T>
Var gather_rows(Tape<T>& tape, Var table, std::vector<int> ids) {
  const Matrix<T>& src = tape.value(table);
  Matrix<T> out = Matrix<T>::Zero(static_cast<Eigen::Index>(ids.size()), src.cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] >= 0) out.row(static_cast<Eigen::Index>(i)) = src.row(ids[i]);
  return tape.push(std::move(out), tape.requires_grad(table), [&tape, table, ids = std::move(ids)](const Matrix<T>& g) {
    Matrix<T>& dst = tape.grad(table);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] >= 0) dst.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

template <typename T>
Var dropout(Tape<T>& tape, Var a, T rate, std::mt19937_64& rng) {
  if (rate <= 0) return a;
  const Matrix<T>& x = tape.value(a);
  Matrix<T> keep(x.rows(), x.cols());
  // Four 16-bit draws per engine call; the rate is quantized to 1/65536.
  const auto cut = static_cast<std::uint64_t>(std::llround(static_cast<double>(rate) * 65536.0));
  const T s = 1 / (1 - rate);
  std::uint64_t bits = 0;
  for (Eigen::Index i = 0; i < keep.size(); ++i) {
    if (i % 4 == 0) bits = rng();
    keep.data()[i] = (bits & 0xFFFF) >= cut ? s : 0;
    bits >>= 16;
  }
  Matrix<T> out = (x.array() * keep.array()).matrix();
  return tape.push(std::move(out), tape.requires_grad(a), [&tape, a, keep = std::move(keep)](const Matrix<T>& g) {
    tape.grad(a).array() += g.array() * keep.array();
  });
}

// ---------------------------------------------------------------------------
// Similarity and loss ops.

// S(i,j) = cos(a_i, b_j) / temperature. Every entry is formed by the same dot
// routine, so identical row pairs give bit-identical entries.
template <typename T>
Var cosine_matrix(Tape<T>& tape, Var a, Var b, T temperature) {
  const Matrix<T>& x = tape.value(a);
  const Matrix<T>& y = tape.value(b);
  const Eigen::Index n = x.rows(), m = y.rows();
  Eigen::Matrix<T, Eigen::Dynamic, 1> nx(n), ny(m);
  for (Eigen::Index i = 0; i < n; ++i) nx(i) = x.row(i).norm();
  for (Eigen::Index j = 0; j < m; ++j) ny(j) = y.row(j).norm();
  // NaN norms pass through so training reports them as a non-finite loss.
  for (Eigen::Index i = 0; i < n; ++i)
    if (nx(i) == 0) throw Error(ErrorKind::kNumericInput, "zero-norm embedding in cosine similarity");
  for (Eigen::Index j = 0; j < m; ++j)
    if (ny(j) == 0) throw Error(ErrorKind::kNumericInput, "zero-norm embedding in cosine similarity");
  Matrix<T> out(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) out(i, j) = x.row(i).dot(y.row(j)) / (nx(i) * ny(j)) / temperature;
  const bool ng = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(out, ng, [&tape, a, b, nx, ny, out, temperature](const Matrix<T>& g) {
    // d cos(x,y)/dx = y/(|x||y|) - cos * x/|x|^2
    const Matrix<T>& x = tape.value(a);
    const Matrix<T>& y = tape.value(b);
    const Eigen::Index n = x.rows(), m = y.rows();
    if (tape.requires_grad(a)) {
      Matrix<T>& dx = tape.grad(a);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
          const T gij = g(i, j) / temperature;
          if (gij == 0) continue;
          const T c = out(i, j) * temperature;
          dx.row(i) += gij * (y.row(j) / (nx(i) * ny(j)) - c * x.row(i) / (nx(i) * nx(i)));
        }
    }
    if (tape.requires_grad(b)) {
      Matrix<T>& dy = tape.grad(b);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
          const T gij = g(i, j) / temperature;
          if (gij == 0) continue;
          const T c = out(i, j) * temperature;
          dy.row(j) += gij * (x.row(i) / (nx(i) * ny(j)) - c * y.row(j) / (ny(j) * ny(j)));
        }
    }
  });
}

// Mean over counted rows of  -log softmax(logits_i)[target_i], the softmax
// restricted to columns with allowed(i, j) != 0. Rows with target < 0 are
// skipped; with no counted rows the loss is 0. Each row is evaluated as
// log sum_j exp(l_ij - l_i,target), so equal logits give exactly log(count).
template <typename T>
Var masked_cross_entropy(Tape<T>& tape, Var logits, std::vector<int> targets,
                         Matrix<std::uint8_t> allowed = {}) {
  const Matrix<T>& x = tape.value(logits);
  const Eigen::Index n = x.rows(), m = x.cols();
  const bool all = allowed.size() == 0;
  Matrix<T> probs = Matrix<T>::Zero(n, m);
  std::vector<T> row_loss;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int tgt = targets[static_cast<std::size_t>(i)];
    if (tgt < 0) continue;
    if (!all && !allowed(i, tgt)) throw Error(ErrorKind::kPrecondition, "target column masked out");
    const T ref = x(i, tgt);
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index j = 0; j < m; ++j)
      if (all || allowed(i, j)) mx = std::max(mx, x(i, j) - ref);
    T sum = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (!(all || allowed(i, j))) continue;
      probs(i, j) = std::exp(x(i, j) - ref - mx);
      sum += probs(i, j);
    }
    probs.row(i) /= sum;
    row_loss.push_back(mx + std::log(sum));
  }
  Matrix<T> out(1, 1);
  out(0, 0) = 0;
  const std::size_t count = row_loss.size();
  if (count > 0) {
    // Shifted mean: exact when all rows agree.
    T acc = 0;
    for (T v : row_loss) acc += v - row_loss.front();
    out(0, 0) = row_loss.front() + acc / static_cast<T>(count);
  }
  return tape.push(std::move(out), tape.requires_grad(logits) && count > 0,
                   [&tape, logits, targets = std::move(targets), probs = std::move(probs), count](const Matrix<T>& g) {
                     Matrix<T>& dst = tape.grad(logits);
                     const T s = g(0, 0) / static_cast<T>(count);
                     for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                       const int tgt = targets[static_cast<std::size_t>(i)];
                       if (tgt < 0) continue;
                       dst.row(i) += s * probs.row(i);
                       dst(i, tgt) -= s;
                     }
                   });
}

// log sum over entries with mask != 0 of exp(x); 1 x 1 output.
template <typename T>
Var masked_logsumexp(Tape<T>& tape, Var a, Matrix<std::uint8_t> mask) {
  const Matrix<T>& x = tape.value(a);
  T mx = -std::numeric_limits<T>::infinity();
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (mask.data()[i]) {
      // NaN wins so a poisoned input yields a NaN loss rather than a bogus max.
      mx = std::isnan(x.data()[i]) || std::isnan(mx) ? std::numeric_limits<T>::quiet_NaN() : std::max(mx, x.data()[i]);
      ++count;
    }
  if (count == 0) throw Error(ErrorKind::kPrecondition, "logsumexp over an empty set");
  Matrix<T> w = Matrix<T>::Zero(x.rows(), x.cols());
  T sum = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!mask.data()[i]) continue;
    w.data()[i] = std::exp(x.data()[i] - mx);
    sum += w.data()[i];
  }
  w /= sum;
  Matrix<T> out(1, 1);
  out(0, 0) = mx + std::log(sum);
  return tape.push(std::move(out), tape.requires_grad(a), [&tape, a, w = std::move(w)](const Matrix<T>& g) {
    tape.grad(a) += g(0, 0) * w;
  });
}

template <typename T>
Var sum_all(Tape<T>& tape, Var a) {
  Matrix<T> out(1, 1);
  out(0, 0) = tape.value(a).sum();
  return tape.push(std::move(out), tape.requires_grad(a), [&tape, a](const Matrix<T>& g) {
    tape.grad(a).array() += g(0, 0);
  });
}

template <typename T>
Var mean_rows(Tape<T>& tape, Var a) {
  const Matrix<T>& x = tape.value(a);
  Matrix<T> out = x.colwise().mean();
  const T inv = 1 / static_cast<T>(x.rows());
  return tape.push(std::move(out), tape.requires_grad(a), [&tape, a, inv](const Matrix<T>& g) {
    tape.grad(a).rowwise() += g.row(0) * inv;
  });
}

}  // namespace bilink::ad
