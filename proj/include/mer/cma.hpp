#pragma once
// Cross-modality augmented transformer block: per central modality, one
// cross-attention branch per auxiliary modality, a self-attention branch
// augmented with the pre-residual cross outputs, and a position-wise gated
// convex fusion of the resulting streams.
//
// Symmetric sums are built as self + (aux1 + aux2); since IEEE addition is
// commutative, swapping the auxiliary inputs together with their branch
// parameters and gate sections reproduces the output bit for bit except for
// the gate softmax reduction.

#include <utility>
#include <vector>

#include "mer/rng.hpp"
#include "mer/tensor.hpp"

namespace mer {

template <class T>
struct AttentionParamsT {
  TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;
  TensorT<T> ln1_g, ln1_b, ln2_g, ln2_b;
  TensorT<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// gate weights are stored per input stream, ordered [self, aux...]; the
// logical gate matrix is their row-wise concatenation
template <class T>
struct CmaLayerParamsT {
  std::vector<AttentionParamsT<T>> cross;  // one per auxiliary modality
  AttentionParamsT<T> self_branch;
  std::vector<TensorT<T>> gate_w;  // each d x (1 + #aux)
  TensorT<T> gate_b;               // 1 + #aux
};

struct AttnCtx {
  int heads = 1;
  float dropout = 0.f;
  bool training = false;
  Rng* rng = nullptr;
};

namespace detail {

template <class T>
TensorT<T> maybe_dropout(const TensorT<T>& x, const AttnCtx& ctx) {
  if (ctx.dropout > 0.f && ctx.training && ctx.rng)
    return dropout(x, ctx.dropout, *ctx.rng, true);
  return x;
}

}  // namespace detail

// multi-head scaled dot-product attention, keys masked by `mask`
// (queries from q_in, keys/values from kv_in); returns the pre-residual
// output projection
template <class T>
TensorT<T> multi_head_attention(const TensorT<T>& q_in, const TensorT<T>& kv_in,
                                const AttentionParamsT<T>& p, const AttnCtx& ctx,
                                const std::vector<uint8_t>& mask) {
  detail::check_same_shape(q_in, kv_in, "attention");
  const int64_t n = q_in.rows(), d = q_in.cols();
  if (d % ctx.heads != 0)
    throw std::invalid_argument("attention: d must be divisible by head count");
  const int64_t dh = d / ctx.heads;
  if (!mask.empty() && int64_t(mask.size()) != n)
    throw std::invalid_argument("attention: mask length mismatch");
  bool any_valid = mask.empty();
  for (uint8_t b : mask) any_valid = any_valid || b;
  if (!any_valid) throw std::invalid_argument("attention: empty attention row");

  auto q = add_rowvec(matmul(q_in, p.wq), p.bq);
  auto k = add_rowvec(matmul(kv_in, p.wk), p.bk);
  auto v = add_rowvec(matmul(kv_in, p.wv), p.bv);

  BoolTensor key_mask;
  const BoolTensor* mask_ptr = nullptr;
  if (!mask.empty()) {
    key_mask = BoolTensor::from({1, n}, mask);
    mask_ptr = &key_mask;
  }

  const T scale_factor = T(1.0 / std::sqrt(double(dh)));
  std::vector<TensorT<T>> head_ctx;
  for (int h = 0; h < ctx.heads; ++h) {
    auto qh = slice_cols(q, h * dh, dh);
    auto kh = slice_cols(k, h * dh, dh);
    auto vh = slice_cols(v, h * dh, dh);
    auto scores = scale(matmul(qh, transpose(kh)), scale_factor);
    auto weights = masked_softmax(scores, 1, mask_ptr);
    weights = detail::maybe_dropout(weights, ctx);
    head_ctx.push_back(matmul(weights, vh));
  }
  auto merged = ctx.heads == 1 ? head_ctx[0] : concat_cols(head_ctx);
  return add_rowvec(matmul(merged, p.wo), p.bo);
}

template <class T>
TensorT<T> feed_forward(const TensorT<T>& x, const AttentionParamsT<T>& p, const AttnCtx& ctx) {
  auto hidden = relu(add_rowvec(matmul(x, p.ffn_w1), p.ffn_b1));
  hidden = detail::maybe_dropout(hidden, ctx);
  return add_rowvec(matmul(hidden, p.ffn_w2), p.ffn_b2);
}

// post-norm residual tail shared by every branch:
//   hbar = Norm(tilde + residual); stream = Norm(FFN(hbar) + hbar)
template <class T>
TensorT<T> residual_tail(const TensorT<T>& tilde, const TensorT<T>& residual,
                         const AttentionParamsT<T>& p, const AttnCtx& ctx) {
  auto hbar = layer_norm(add(tilde, residual), p.ln1_g, p.ln1_b);
  auto ffn_out = detail::maybe_dropout(feed_forward(hbar, p, ctx), ctx);
  return layer_norm(add(ffn_out, hbar), p.ln2_g, p.ln2_b);
}

// cross branch: returns (pre-residual cross output, full stream)
template <class T>
std::pair<TensorT<T>, TensorT<T>> cross_attend(const TensorT<T>& h_central,
                                               const TensorT<T>& h_aux,
                                               const AttentionParamsT<T>& p, const AttnCtx& ctx,
                                               const std::vector<uint8_t>& mask = {}) {
  auto tilde = multi_head_attention(h_central, h_aux, p, ctx, mask);
  auto stream = residual_tail(tilde, h_central, p, ctx);
  return {tilde, stream};
}

// self branch: the pre-residual self-attention output is augmented with the
// pre-residual cross outputs before the residual/norm/FFN tail
template <class T>
TensorT<T> central_self(const TensorT<T>& h_central, const std::vector<TensorT<T>>& cross_tildes,
                        const AttentionParamsT<T>& p, const AttnCtx& ctx,
                        const std::vector<uint8_t>& mask = {}) {
  auto tilde = multi_head_attention(h_central, h_central, p, ctx, mask);
  if (cross_tildes.size() == 1) {
    tilde = add(tilde, cross_tildes[0]);
  } else if (cross_tildes.size() == 2) {
    tilde = add(tilde, add(cross_tildes[0], cross_tildes[1]));
  } else if (!cross_tildes.empty()) {
    throw std::invalid_argument("central_self: at most two cross branches");
  }
  return residual_tail(tilde, h_central, p, ctx);
}

// position-wise softmax gate over the streams (ordered [self, aux...]);
// output is the convex combination of the streams
template <class T>
TensorT<T> gate_fuse(const std::vector<TensorT<T>>& streams,
                     const std::vector<TensorT<T>>& gate_w, const TensorT<T>& gate_b) {
  if (streams.size() < 2) throw std::invalid_argument("gate_fuse: need at least two streams");
  if (gate_w.size() != streams.size())
    throw std::invalid_argument("gate_fuse: one weight block per stream required");
  for (const auto& s : streams) detail::check_same_shape(streams[0], s, "gate_fuse");

  TensorT<T> logits = matmul(streams[0], gate_w[0]);
  if (streams.size() == 2) {
    logits = add(logits, matmul(streams[1], gate_w[1]));
  } else {
    logits = add(logits, add(matmul(streams[1], gate_w[1]), matmul(streams[2], gate_w[2])));
  }
  logits = add_rowvec(logits, gate_b);
  auto weights = masked_softmax(logits, 1);

  auto weighted = [&](size_t k) {
    return mul_colvec(streams[k], slice_cols(weights, int64_t(k), 1));
  };
  if (streams.size() == 2) return add(weighted(0), weighted(1));
  return add(weighted(0), add(weighted(1), weighted(2)));
}

// one full block per configured layer; layers stack on the central stream
// while the auxiliary inputs stay fixed
template <class T>
TensorT<T> cma_forward(const TensorT<T>& h_central, const std::vector<TensorT<T>>& h_aux,
                       const std::vector<CmaLayerParamsT<T>>& layers, const AttnCtx& ctx,
                       const std::vector<uint8_t>& mask = {}) {
  TensorT<T> cur = h_central;
  for (const auto& layer : layers) {
    if (layer.cross.size() != h_aux.size())
      throw std::invalid_argument("cma_forward: branch/aux count mismatch");
    std::vector<TensorT<T>> tildes, streams;
    for (size_t a = 0; a < h_aux.size(); ++a) {
      auto [tilde, stream] = cross_attend(cur, h_aux[a], layer.cross[a], ctx, mask);
      tildes.push_back(std::move(tilde));
      streams.push_back(std::move(stream));
    }
    auto self_stream = central_self(cur, tildes, layer.self_branch, ctx, mask);
    if (h_aux.empty()) {
      cur = self_stream;  // single-modality mode degenerates to the self branch
    } else {
      std::vector<TensorT<T>> ordered;
      ordered.push_back(std::move(self_stream));
      for (auto& s : streams) ordered.push_back(std::move(s));
      cur = gate_fuse(ordered, layer.gate_w, layer.gate_b);
    }
  }
  return cur;
}

}  // namespace mer
