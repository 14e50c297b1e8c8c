// Incremental forward pass for the autoregressive model with per-layer
// key/value caches. Positions are appended in stream order; each append
// returns the final hidden states of the block rows for head readouts.
// Attention masks arrive as explicit allowed-column rows so the decoder
// stays agnostic of masking policy; callers derive them from mask_allows,
// the same predicate the training masks are built from.
//
// Block contract: a row that attends a later column must be appended in the
// same block as that column. Phoneme rows see the whole phoneme segment
// including the separator that closes it, so positions up to and including
// that separator always form one prefill block; everything after it is
// causal and may be appended position by position.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cadence/model.hpp"

namespace cadence {

// Allowed-key flags for one appended row, one vector per head group in the
// model's group order, each covering columns [0, appended_total).
struct DecodeMaskRows {
  std::vector<std::vector<uint8_t>> per_group;
};

template <typename S>
class ArDecoder {
 public:
  ArDecoder(const ArModel<S>& m, const std::vector<int>& group_heads)
      : m_(m), group_heads_(group_heads) {
    int total = 0;
    for (int h : group_heads_) total += h;
    if (total != m_.cfg.heads)
      throw ModelError("decoder: group heads must sum to model heads");
    kv_.resize(m_.cfg.layers);
    for (auto& layer : kv_) {
      layer.k.assign(m_.cfg.heads, Mat<S>());
      layer.v.assign(m_.cfg.heads, Mat<S>());
    }
  }

  int size() const { return count_; }

  // Appends a block of already-embedded input rows. mask_rows[i] describes
  // row i of the block and must cover the stream including the block itself.
  // Returns the final hidden states of the block rows.
  Mat<S> append(const Mat<S>& x_block, const std::vector<DecodeMaskRows>& mask_rows) {
    int b = static_cast<int>(x_block.rows());
    if (b == 0) throw ModelError("decoder: empty block");
    if (static_cast<int>(mask_rows.size()) != b)
      throw ModelError("decoder: need mask rows per appended row");
    int total = count_ + b;
    for (const auto& mr : mask_rows) {
      if (static_cast<int>(mr.per_group.size()) != static_cast<int>(group_heads_.size()))
        throw ModelError("decoder: mask rows per group mismatch");
      for (const auto& g : mr.per_group)
        if (static_cast<int>(g.size()) != total)
          throw ModelError("decoder: mask row must cover all appended columns");
    }

    Mat<S> x = x_block;
    S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(m_.cfg.head_dim()));
    for (int l = 0; l < m_.cfg.layers; ++l) {
      const Block<S>& blk = m_.core.blocks[l];
      Mat<S> h = row_layer_norm(x, blk.ln1_g.value, blk.ln1_b.value);
      Mat<S> merged(b, m_.cfg.dim);
      int head = 0;
      for (size_t g = 0; g < group_heads_.size(); ++g) {
        for (int i = 0; i < group_heads_[g]; ++i, ++head) {
          Mat<S>& kc = kv_[l].k[head];
          Mat<S>& vc = kv_[l].v[head];
          Mat<S> k_new = h * blk.wk[head].value;
          Mat<S> v_new = h * blk.wv[head].value;
          kc.conservativeResize(total, m_.cfg.head_dim());
          vc.conservativeResize(total, m_.cfg.head_dim());
          kc.bottomRows(b) = k_new;
          vc.bottomRows(b) = v_new;
          Mat<S> q = h * blk.wq[head].value;
          for (int r = 0; r < b; ++r) {
            const std::vector<uint8_t>& allow = mask_rows[r].per_group[g];
            Eigen::Matrix<S, 1, Eigen::Dynamic> scores =
                (q.row(r) * kc.transpose()) * inv_sqrt_hd;
            S mx = std::numeric_limits<S>::lowest();
            bool any = false;
            for (int c = 0; c < total; ++c) {
              if (!allow[c]) continue;
              any = true;
              mx = std::max(mx, scores(0, c));
            }
            if (!any) throw ModelError("decoder: row attends nothing");
            S sum = 0;
            for (int c = 0; c < total; ++c) {
              if (!allow[c]) {
                scores(0, c) = 0;
                continue;
              }
              S e = std::exp(scores(0, c) - mx);
              scores(0, c) = e;
              sum += e;
            }
            Eigen::Matrix<S, 1, Eigen::Dynamic> out =
                Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(1, m_.cfg.head_dim());
            for (int c = 0; c < total; ++c) {
              if (!allow[c]) continue;
              out += (scores(0, c) / sum) * vc.row(c);
            }
            merged.block(r, head * m_.cfg.head_dim(), 1, m_.cfg.head_dim()) = out;
          }
        }
      }
      x += merged * blk.wo.value;
      Mat<S> h2 = row_layer_norm(x, blk.ln2_g.value, blk.ln2_b.value);
      Mat<S> f = h2 * blk.w1.value;
      f.rowwise() += Eigen::Matrix<S, 1, Eigen::Dynamic>(blk.b1.value.row(0));
      f = f.unaryExpr([](S a) {
        return S(0.5) * a * (S(1) + std::erf(a / std::sqrt(S(2))));
      });
      Mat<S> f2 = f * blk.w2.value;
      f2.rowwise() += Eigen::Matrix<S, 1, Eigen::Dynamic>(blk.b2.value.row(0));
      x += f2;
    }
    count_ = total;
    last_hidden_ = row_layer_norm(x, m_.core.lnf_g.value, m_.core.lnf_b.value);
    return last_hidden_;
  }

  const Mat<S>& last_hidden() const { return last_hidden_; }

  // Head readouts for one hidden row.
  Eigen::Matrix<S, 1, Eigen::Dynamic> pitch_logits(const Mat<S>& hidden, int row) const {
    return hidden.row(row) * m_.head_pitch_w.value + m_.head_pitch_b.value.row(0);
  }
  Eigen::Matrix<S, 1, Eigen::Dynamic> duration_logits(const Mat<S>& hidden, int row) const {
    return hidden.row(row) * m_.head_dur_w.value + m_.head_dur_b.value.row(0);
  }
  Eigen::Matrix<S, 1, Eigen::Dynamic> speech_logits(const Mat<S>& hidden, int row) const {
    return hidden.row(row) * m_.head_speech_w.value + m_.head_speech_b.value.row(0);
  }

 private:
  struct LayerCache {
    std::vector<Mat<S>> k, v;
  };

  static Mat<S> row_layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias) {
    const S eps = static_cast<S>(1e-5);
    Mat<S> out(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
      S mean = x.row(r).mean();
      S var = (x.row(r).array() - mean).square().mean();
      S is = S(1) / std::sqrt(var + eps);
      out.row(r) = ((x.row(r).array() - mean) * is).matrix();
      out.row(r) = out.row(r).cwiseProduct(gain.row(0)) + bias.row(0);
    }
    return out;
  }

  const ArModel<S>& m_;
  std::vector<int> group_heads_;
  std::vector<LayerCache> kv_;
  Mat<S> last_hidden_;
  int count_ = 0;
};

// Embedded input rows for a span of stream positions, exactly as the tape
// forward builds them.
template <typename S>
Mat<S> embed_positions(const ArModel<S>& m, const SequenceLayout& layout, int begin,
                       int end) {
  StreamIds ids = stream_ids(layout);
  int rows = end - begin;
  Mat<S> x = Mat<S>::Zero(rows, m.cfg.dim);
  std::vector<int> pos(rows);
  for (int i = begin; i < end; ++i) {
    int r = i - begin;
    pos[r] = i;
    if (ids.phoneme[i] >= 0) x.row(r) += m.emb_phoneme.value.row(ids.phoneme[i]);
    if (ids.pitch[i] >= 0) x.row(r) += m.emb_pitch.value.row(ids.pitch[i]);
    if (ids.dur[i] >= 0) x.row(r) += m.emb_dur.value.row(ids.dur[i]);
    if (ids.codec[i] >= 0) x.row(r) += m.emb_codec.value.row(ids.codec[i]);
    if (ids.sep_p[i] >= 0) x.row(r) += m.emb_sep_p.value.row(0);
    if (ids.sep_c[i] >= 0) x.row(r) += m.emb_sep_c.value.row(0);
  }
  x += positional_rows<S>(pos, m.cfg.dim);
  return x;
}

// Mask rows for appending layout positions [begin, end), derived from the
// shared masking predicate.
inline std::vector<DecodeMaskRows> decode_mask_rows(const SequenceLayout& layout,
                                                    const AlignmentMap& align,
                                                    const MaskConfig& cfg, int begin,
                                                    int end) {
  auto plan = head_group_plan(layout, cfg);
  std::vector<DecodeMaskRows> out;
  for (int r = begin; r < end; ++r) {
    DecodeMaskRows mr;
    for (auto [role, heads] : plan) {
      std::vector<uint8_t> row(end, 0);
      for (int c = 0; c < end; ++c)
        row[c] = mask_allows(layout, align, cfg, role, r, c) ? 1 : 0;
      mr.per_group.push_back(std::move(row));
    }
    out.push_back(std::move(mr));
  }
  return out;
}

// Group head counts for a layout/config pair, matching decode_mask_rows.
inline std::vector<int> decode_group_heads(const SequenceLayout& layout,
                                           const MaskConfig& cfg) {
  std::vector<int> out;
  for (auto [role, heads] : head_group_plan(layout, cfg)) out.push_back(heads);
  return out;
}

// Full-sequence hidden states through the decoder path (one big prefill).
// Used by tests to pin the cached path to the tape path, and by sampling to
// score a finished stream.
template <typename S>
Mat<S> decoder_full_hidden(const ArModel<S>& m, const SequenceLayout& layout,
                           const AlignmentMap& align) {
  ArDecoder<S> dec(m, decode_group_heads(layout, m.mask_cfg));
  Mat<S> x = embed_positions(m, layout, 0, layout.size());
  auto rows = decode_mask_rows(layout, align, m.mask_cfg, 0, layout.size());
  return dec.append(x, rows);
}

}  // namespace cadence
