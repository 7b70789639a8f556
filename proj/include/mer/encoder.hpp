#pragma once
// Modality encoding: 1-d conv encode/decode across the utterance axis with
// a Frobenius reconstruction loss, plus speaker and sinusoidal positional
// embeddings added to the latent stream.

#include <cmath>
#include <vector>

#include "mer/tensor.hpp"

namespace mer {

// channel compression d_m -> d, sequence length preserved
template <class T>
TensorT<T> conv_encode(const TensorT<T>& u, const TensorT<T>& kernel, const TensorT<T>& bias) {
  return conv1d(u, kernel, bias);
}

// channel expansion d -> d_m, mirror of conv_encode
template <class T>
TensorT<T> conv_decode(const TensorT<T>& u_latent, const TensorT<T>& kernel,
                       const TensorT<T>& bias) {
  return conv1d(u_latent, kernel, bias);
}

// sum of squared entrywise differences over unmasked rows
template <class T>
TensorT<T> reconstruction_loss(const TensorT<T>& u, const TensorT<T>& u_recon,
                               const std::vector<uint8_t>& mask = {}) {
  detail::check_same_shape(u, u_recon, "reconstruction_loss");
  auto diff = mask_rows(sub(u, u_recon), mask);
  return sum_all(mul(diff, diff));
}

// row i is the embedding of speaker ids[i]
template <class T>
TensorT<T> speaker_embeddings(const TensorT<T>& table, const std::vector<int>& ids) {
  return embedding_rows(table, ids);
}

// p[i, 2k] = sin(i / 10000^(2k/d)), p[i, 2k+1] = cos(i / 10000^(2k/d))
template <class T>
TensorT<T> positional_encoding(int64_t n, int64_t d) {
  if (d % 2 != 0) throw std::invalid_argument("positional_encoding: d must be even");
  if (n < 1 || d < 2) throw std::invalid_argument("positional_encoding: bad extents");
  std::vector<T> v(size_t(n * d));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t k = 0; 2 * k < d; ++k) {
      const double freq = std::pow(10000.0, double(2 * k) / double(d));
      v[size_t(i * d + 2 * k)] = T(std::sin(double(i) / freq));
      v[size_t(i * d + 2 * k + 1)] = T(std::cos(double(i) / freq));
    }
  }
  return TensorT<T>::from_data({n, d}, std::move(v));
}

// H_m = U'_m + S + P
template <class T>
TensorT<T> assemble_modality(const TensorT<T>& u_latent, const TensorT<T>& speaker,
                             const TensorT<T>& positional) {
  return add(u_latent, add(speaker, positional));
}

}  // namespace mer
