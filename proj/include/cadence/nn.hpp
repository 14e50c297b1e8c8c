// Reverse-mode automatic differentiation over Eigen matrices.
//
// A Tape records operations as they execute; backward() replays them in
// reverse, accumulating gradients into Parameter objects. Gradients flow
// only through nodes that (transitively) depend on a parameter, so constant
// inputs cost nothing extra. The tape is rebuilt per training example, which
// keeps dynamic shapes and per-example masks trivial.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "cadence/errors.hpp"
#include "cadence/masking.hpp"
#include "cadence/rng.hpp"

namespace cadence::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class InitKind : uint8_t { Normal, Zero, One };

template <typename S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  InitKind init_kind = InitKind::Normal;

  Parameter() = default;
  Parameter(std::string n, int rows, int cols, InitKind init = InitKind::Normal)
      : name(std::move(n)), init_kind(init) {
    value = Mat<S>::Zero(rows, cols);
    grad = Mat<S>::Zero(rows, cols);
  }

  void zero_grad() { grad.setZero(); }
  long long count() const { return static_cast<long long>(value.rows()) * value.cols(); }
};

struct Var {
  int idx = -1;
};

template <typename S>
class Tape {
 public:
  const Mat<S>& value(Var v) const { return nodes_[v.idx].value; }

  Var leaf(Parameter<S>* p) {
    int idx = push(p->value, true);
    nodes_[idx].backward = [this, p, idx] { p->grad += nodes_[idx].grad; };
    return {idx};
  }

  Var constant(Mat<S> m) { return {push(std::move(m), false)}; }

  Var matmul(Var a, Var b) {
    int idx = push(nodes_[a.idx].value * nodes_[b.idx].value, needs(a) || needs(b));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, a, b, idx] {
        const Mat<S>& g = nodes_[idx].grad;
        if (needs(a)) nodes_[a.idx].grad.noalias() += g * nodes_[b.idx].value.transpose();
        if (needs(b)) nodes_[b.idx].grad.noalias() += nodes_[a.idx].value.transpose() * g;
      };
    return {idx};
  }

  // a * b^T, the attention-score shape.
  Var matmul_nt(Var a, Var b) {
    int idx = push(nodes_[a.idx].value * nodes_[b.idx].value.transpose(),
                   needs(a) || needs(b));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, a, b, idx] {
        const Mat<S>& g = nodes_[idx].grad;
        if (needs(a)) nodes_[a.idx].grad.noalias() += g * nodes_[b.idx].value;
        if (needs(b)) nodes_[b.idx].grad.noalias() += g.transpose() * nodes_[a.idx].value;
      };
    return {idx};
  }

  Var add(Var a, Var b) {
    int idx = push(nodes_[a.idx].value + nodes_[b.idx].value, needs(a) || needs(b));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, a, b, idx] {
        if (needs(a)) nodes_[a.idx].grad += nodes_[idx].grad;
        if (needs(b)) nodes_[b.idx].grad += nodes_[idx].grad;
      };
    return {idx};
  }

  // Adds a 1 x C bias row to every row of a.
  Var add_rowvec(Var a, Var bias) {
    Mat<S> out = nodes_[a.idx].value;
    out.rowwise() += Eigen::Matrix<S, 1, Eigen::Dynamic>(nodes_[bias.idx].value.row(0));
    int idx = push(std::move(out), needs(a) || needs(bias));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, a, bias, idx] {
        if (needs(a)) nodes_[a.idx].grad += nodes_[idx].grad;
        if (needs(bias)) nodes_[bias.idx].grad.row(0) += nodes_[idx].grad.colwise().sum();
      };
    return {idx};
  }

  Var scale(Var a, S s) {
    int idx = push(nodes_[a.idx].value * s, needs(a));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, a, s, idx] {
        nodes_[a.idx].grad += nodes_[idx].grad * s;
      };
    return {idx};
  }

  // Gathers table rows by id; id -1 yields a zero row and no gradient.
  Var embed_rows(Var table, std::vector<int> ids) {
    const Mat<S>& t = nodes_[table.idx].value;
    Mat<S> out = Mat<S>::Zero(static_cast<int>(ids.size()), t.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0) continue;
      if (ids[i] >= t.rows()) throw ModelError("embed_rows: id beyond table");
      out.row(static_cast<int>(i)) = t.row(ids[i]);
    }
    int idx = push(std::move(out), needs(table));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, table, ids = std::move(ids), idx] {
        for (size_t i = 0; i < ids.size(); ++i)
          if (ids[i] >= 0)
            nodes_[table.idx].grad.row(ids[i]) += nodes_[idx].grad.row(static_cast<int>(i));
      };
    return {idx};
  }

  Var select_rows(Var a, std::vector<int> rows) {
    const Mat<S>& v = nodes_[a.idx].value;
    Mat<S> out(static_cast<int>(rows.size()), v.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= v.rows()) throw ModelError("select_rows: out of range");
      out.row(static_cast<int>(i)) = v.row(rows[i]);
    }
    int idx = push(std::move(out), needs(a));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, a, rows = std::move(rows), idx] {
        for (size_t i = 0; i < rows.size(); ++i)
          nodes_[a.idx].grad.row(rows[i]) += nodes_[idx].grad.row(static_cast<int>(i));
      };
    return {idx};
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ModelError("concat_cols: no parts");
    int rows = static_cast<int>(nodes_[parts[0].idx].value.rows());
    int cols = 0;
    bool any = false;
    for (Var p : parts) {
      cols += static_cast<int>(nodes_[p.idx].value.cols());
      any = any || needs(p);
    }
    Mat<S> out(rows, cols);
    int at = 0;
    for (Var p : parts) {
      const Mat<S>& v = nodes_[p.idx].value;
      out.middleCols(at, static_cast<int>(v.cols())) = v;
      at += static_cast<int>(v.cols());
    }
    int idx = push(std::move(out), any);
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, parts, idx] {
        int at2 = 0;
        for (Var p : parts) {
          int w = static_cast<int>(nodes_[p.idx].value.cols());
          if (needs(p)) nodes_[p.idx].grad += nodes_[idx].grad.middleCols(at2, w);
          at2 += w;
        }
      };
    return {idx};
  }

  // Row-wise layer normalization with learned gain and bias (1 x C each).
  Var layer_norm(Var x, Var gain, Var bias) {
    const Mat<S>& v = nodes_[x.idx].value;
    const S eps = static_cast<S>(1e-5);
    int rows = static_cast<int>(v.rows()), cols = static_cast<int>(v.cols());
    Mat<S> normed(rows, cols);
    Mat<S> inv_sigma(rows, 1);
    for (int r = 0; r < rows; ++r) {
      S mean = v.row(r).mean();
      S var = (v.row(r).array() - mean).square().mean();
      S is = S(1) / std::sqrt(var + eps);
      inv_sigma(r, 0) = is;
      normed.row(r) = (v.row(r).array() - mean) * is;
    }
    Mat<S> out = normed;
    const auto& g_row = nodes_[gain.idx].value.row(0);
    const auto& b_row = nodes_[bias.idx].value.row(0);
    for (int r = 0; r < rows; ++r)
      out.row(r) = out.row(r).cwiseProduct(g_row) + b_row;
    int idx = push(std::move(out), needs(x) || needs(gain) || needs(bias));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, x, gain, bias, idx, normed = std::move(normed),
                              inv_sigma = std::move(inv_sigma)] {
        const Mat<S>& g = nodes_[idx].grad;
        const auto& gr = nodes_[gain.idx].value.row(0);
        if (needs(gain))
          nodes_[gain.idx].grad.row(0) += g.cwiseProduct(normed).colwise().sum();
        if (needs(bias)) nodes_[bias.idx].grad.row(0) += g.colwise().sum();
        if (needs(x)) {
          int rows2 = static_cast<int>(g.rows());
          for (int r = 0; r < rows2; ++r) {
            auto dh = g.row(r).cwiseProduct(gr);
            S m1 = dh.mean();
            S m2 = dh.cwiseProduct(normed.row(r)).mean();
            nodes_[x.idx].grad.row(r) +=
                (dh.array() - m1 - normed.row(r).array() * m2).matrix() * inv_sigma(r, 0);
          }
        }
      };
    return {idx};
  }

  // Row-wise softmax over allowed columns; disallowed columns are exactly
  // zero and contribute nothing forward or backward, so masked positions
  // cannot influence the output. A null mask means all columns are allowed.
  Var masked_softmax(Var scores, const AttnMask* mask) {
    const Mat<S>& v = nodes_[scores.idx].value;
    int rows = static_cast<int>(v.rows()), cols = static_cast<int>(v.cols());
    if (mask && (mask->size != cols))
      throw ModelError("masked_softmax: mask size does not match columns");
    Mat<S> out = Mat<S>::Zero(rows, cols);
    for (int r = 0; r < rows; ++r) {
      S mx = std::numeric_limits<S>::lowest();
      bool any = false;
      for (int c = 0; c < cols; ++c) {
        if (mask && !mask->at(r, c)) continue;
        any = true;
        mx = std::max(mx, v(r, c));
      }
      if (!any) continue;
      S sum = 0;
      for (int c = 0; c < cols; ++c) {
        if (mask && !mask->at(r, c)) continue;
        S e = std::exp(v(r, c) - mx);
        out(r, c) = e;
        sum += e;
      }
      for (int c = 0; c < cols; ++c) {
        if (mask && !mask->at(r, c)) continue;
        out(r, c) /= sum;
      }
    }
    int idx = push(std::move(out), needs(scores));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, scores, mask, idx] {
        const Mat<S>& p = nodes_[idx].value;
        const Mat<S>& g = nodes_[idx].grad;
        int rows2 = static_cast<int>(p.rows()), cols2 = static_cast<int>(p.cols());
        for (int r = 0; r < rows2; ++r) {
          S dot = 0;
          for (int c = 0; c < cols2; ++c) dot += g(r, c) * p(r, c);
          for (int c = 0; c < cols2; ++c) {
            if (mask && !mask->at(r, c)) continue;
            nodes_[scores.idx].grad(r, c) += p(r, c) * (g(r, c) - dot);
          }
        }
      };
    return {idx};
  }

  // Gaussian error linear unit, exact erf form.
  Var gelu(Var x) {
    const Mat<S>& v = nodes_[x.idx].value;
    Mat<S> out = v.unaryExpr([](S a) {
      return S(0.5) * a * (S(1) + std::erf(a / std::sqrt(S(2))));
    });
    int idx = push(std::move(out), needs(x));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, x, idx] {
        const Mat<S>& vin = nodes_[x.idx].value;
        Mat<S> d = vin.unaryExpr([](S a) {
          S cdf = S(0.5) * (S(1) + std::erf(a / std::sqrt(S(2))));
          S pdf = std::exp(S(-0.5) * a * a) / std::sqrt(S(2) * std::numbers::pi_v<S>);
          return cdf + a * pdf;
        });
        nodes_[x.idx].grad += nodes_[idx].grad.cwiseProduct(d);
      };
    return {idx};
  }

  // Inverted dropout; identity when p == 0.
  Var dropout(Var x, S p, Rng& rng) {
    if (p <= S(0)) return x;
    if (p >= S(1)) throw ModelError("dropout: rate must be below 1");
    const Mat<S>& v = nodes_[x.idx].value;
    Mat<S> keep(v.rows(), v.cols());
    S inv = S(1) / (S(1) - p);
    for (int r = 0; r < v.rows(); ++r)
      for (int c = 0; c < v.cols(); ++c)
        keep(r, c) = rng.next_double() < static_cast<double>(p) ? S(0) : inv;
    int idx = push(v.cwiseProduct(keep), needs(x));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, x, idx, keep = std::move(keep)] {
        nodes_[x.idx].grad += nodes_[idx].grad.cwiseProduct(keep);
      };
    return {idx};
  }

  // Sum of cross-entropy over rows; target -1 skips a row. Returns 1 x 1.
  Var ce_sum(Var logits, std::vector<int> targets) {
    const Mat<S>& v = nodes_[logits.idx].value;
    if (static_cast<int>(targets.size()) != v.rows())
      throw ModelError("ce_sum: target count does not match rows");
    S total = 0;
    for (int r = 0; r < v.rows(); ++r) {
      int t = targets[r];
      if (t < 0) continue;
      if (t >= v.cols()) throw ModelError("ce_sum: target beyond logit count");
      S mx = v.row(r).maxCoeff();
      S lse = std::log((v.row(r).array() - mx).exp().sum()) + mx;
      total += lse - v(r, t);
    }
    Mat<S> out(1, 1);
    out(0, 0) = total;
    int idx = push(std::move(out), needs(logits));
    if (nodes_[idx].needs_grad)
      nodes_[idx].backward = [this, logits, targets = std::move(targets), idx] {
        const Mat<S>& vin = nodes_[logits.idx].value;
        S g = nodes_[idx].grad(0, 0);
        for (int r = 0; r < vin.rows(); ++r) {
          int t = targets[r];
          if (t < 0) continue;
          S mx = vin.row(r).maxCoeff();
          Eigen::Array<S, 1, Eigen::Dynamic> e = (vin.row(r).array() - mx).exp();
          e /= e.sum();
          nodes_[logits.idx].grad.row(r) += g * e.matrix();
          nodes_[logits.idx].grad(r, t) -= g;
        }
      };
    return {idx};
  }

  void backward(Var loss) {
    if (nodes_[loss.idx].value.size() != 1)
      throw ModelError("backward: loss must be a scalar");
    if (!nodes_[loss.idx].needs_grad)
      throw ModelError("backward: loss does not depend on any parameter");
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    nodes_[loss.idx].grad(0, 0) = S(1);
    for (int i = loss.idx; i >= 0; --i)
      if (nodes_[i].needs_grad && nodes_[i].backward) nodes_[i].backward();
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    std::function<void()> backward;
    bool needs_grad = false;
  };

  bool needs(Var v) const { return nodes_[v.idx].needs_grad; }

  int push(Mat<S> value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Deque keeps node references stable while new ops are recorded, so
  // value() results stay valid for the life of the tape.
  std::deque<Node> nodes_;
};

}  // namespace cadence::nn
