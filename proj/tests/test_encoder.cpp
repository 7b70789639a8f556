// Modality encoder: conv encode/decode contracts, reconstruction loss,
// speaker/positional embeddings, assembly, and padding invariance.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mer/encoder.hpp"
#include "mer/gradcheck.hpp"
#include "mer/param_store.hpp"
#include "testutil.hpp"

using namespace mer;

TEST_CASE("conv_encode k=1 is a per-utterance affine map") {
  // zero input -> bias broadcast to every row
  auto u = Tensor::zeros({3, 2});
  auto w = Tensor::from_data({1, 2, 4}, std::vector<float>(8, 0.5f));
  auto b = Tensor::from_data({4}, {1.f, 2.f, 3.f, 4.f});
  auto out = conv_encode(u, w, b);
  REQUIRE(out.shape() == Shape{3, 4});
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 4; ++j) CHECK(out.at(i, j) == float(j + 1));
}

TEST_CASE("conv_encode k=3 on a single row uses only the center tap") {
  Rng rng(31);
  auto u = testutil::random_tensor({1, 3}, rng);
  auto w = testutil::random_tensor({3, 3, 2}, rng);
  auto b = testutil::random_tensor({2}, rng);
  auto out = conv_encode(u, w, b);
  REQUIRE(out.shape() == Shape{1, 2});
  for (int64_t o = 0; o < 2; ++o) {
    double expect = double(b.values()[size_t(o)]);
    for (int64_t j = 0; j < 3; ++j)
      expect += double(u.at(0, j)) * double(w.values()[size_t((1 * 3 + j) * 2 + o)]);
    CHECK(out.at(0, o) == doctest::Approx(expect));
  }
}

TEST_CASE("conv_encode with identity center tap reproduces the input") {
  Rng rng(32);
  const int64_t d = 4;
  auto u = testutil::random_tensor({5, d}, rng);
  std::vector<float> wv(size_t(3 * d * d), 0.f);
  for (int64_t j = 0; j < d; ++j) wv[size_t((1 * d + j) * d + j)] = 1.f;  // center tap = I
  auto w = Tensor::from_data({3, d, d}, std::move(wv));
  auto out = conv_encode(u, w, Tensor::zeros({d}));
  for (size_t i = 0; i < u.values().size(); ++i) CHECK(out.values()[i] == u.values()[i]);
}

TEST_CASE("conv_decode: zero latent gives bias rows; single-row boundary") {
  auto b = Tensor::from_data({3}, {0.5f, -1.f, 2.f});
  auto out = conv_decode(Tensor::zeros({4, 2}), Tensor::zeros({3, 2, 3}), b);
  REQUIRE(out.shape() == Shape{4, 3});
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 3; ++j) CHECK(out.at(i, j) == b.values()[size_t(j)]);

  Rng rng(33);
  auto one_row = conv_decode(testutil::random_tensor({1, 2}, rng),
                             testutil::random_tensor({3, 2, 3}, rng), b);
  CHECK(one_row.shape() == Shape{1, 3});
}

TEST_CASE("decode(encode) with mutually inverse 1x1 kernels is the identity") {
  // a well-conditioned 2x2 matrix and its explicit inverse
  const float a = 2.f, bb = 1.f, c = 1.f, dd = 3.f;
  const float det = a * dd - bb * c;
  auto w_enc = Tensor::from_data({1, 2, 2}, {a, c, bb, dd});  // [in][out] layout per tap
  auto w_dec = Tensor::from_data({1, 2, 2}, {dd / det, -c / det, -bb / det, a / det});
  Rng rng(34);
  auto u = testutil::random_tensor({6, 2}, rng);
  auto round_trip = conv_decode(conv_encode(u, w_enc, Tensor::zeros({2})), w_dec,
                                Tensor::zeros({2}));
  for (size_t i = 0; i < u.values().size(); ++i)
    CHECK(round_trip.values()[i] == doctest::Approx(u.values()[i]).epsilon(1e-5));
}

TEST_CASE("conv encode/decode preserve sequence length") {
  Rng rng(35);
  for (int64_t n : {1, 2, 7}) {
    for (int k : {1, 3, 5}) {
      auto u = testutil::random_tensor({n, 3}, rng);
      auto w = testutil::random_tensor({k, 3, 4}, rng);
      auto out = conv_encode(u, w, Tensor::zeros({4}));
      CHECK(out.rows() == n);
    }
  }
}

TEST_CASE("reconstruction loss: zero at equality, unit difference, brute force") {
  auto u = Tensor::from_data({1, 2}, {1.f, 0.f});
  CHECK(reconstruction_loss(u, u).item() == 0.0f);

  auto u2 = Tensor::from_data({1, 2}, {0.f, 0.f});
  CHECK(reconstruction_loss(u, u2).item() == 1.0f);

  Rng rng(36);
  auto x = testutil::random_tensor({3, 4}, rng);
  auto y = testutil::random_tensor({3, 4}, rng);
  double expect = 0;
  for (size_t i = 0; i < x.values().size(); ++i) {
    const double diff = double(x.values()[i]) - double(y.values()[i]);
    expect += diff * diff;
  }
  CHECK(reconstruction_loss(x, y).item() == doctest::Approx(expect).epsilon(1e-5));
  CHECK(reconstruction_loss(x, y).item() >= 0.f);
  CHECK_THROWS_AS(reconstruction_loss(x, Tensor::zeros({4, 3})), std::invalid_argument);
}

TEST_CASE("reconstruction loss ignores masked rows (padding invariance)") {
  Rng rng(37);
  auto x = testutil::random_tensor({3, 4}, rng);
  auto y = testutil::random_tensor({3, 4}, rng);
  const float base = reconstruction_loss(x, y).item();

  // append two zero rows, masked out
  auto pad = [](const Tensor& t) {
    std::vector<float> v = t.values();
    v.resize(v.size() + 8, 0.f);
    return Tensor::from_data({5, 4}, std::move(v));
  };
  std::vector<uint8_t> mask{1, 1, 1, 0, 0};
  CHECK(reconstruction_loss(pad(x), pad(y), mask).item() == base);
}

TEST_CASE("speaker embeddings: identity table, repeated ids, lookup oracle") {
  auto eye = Tensor::from_data({2, 2}, {1.f, 0.f, 0.f, 1.f});
  auto out = speaker_embeddings(eye, {0, 1});
  CHECK(out.at(0, 0) == 1.f);
  CHECK(out.at(0, 1) == 0.f);
  CHECK(out.at(1, 0) == 0.f);
  CHECK(out.at(1, 1) == 1.f);

  Rng rng(38);
  auto table = testutil::random_tensor({4, 3}, rng);
  auto reps = speaker_embeddings(table, {2, 2});
  for (int64_t j = 0; j < 3; ++j) CHECK(reps.at(0, j) == reps.at(1, j));

  auto picked = speaker_embeddings(table, {1, 0, 1});
  for (int64_t j = 0; j < 3; ++j) {
    CHECK(picked.at(0, j) == table.at(1, j));
    CHECK(picked.at(1, j) == table.at(0, j));
    CHECK(picked.at(2, j) == table.at(1, j));
  }
  CHECK_THROWS_AS(speaker_embeddings(table, {4}), std::invalid_argument);
}

TEST_CASE("positional encoding: first row, explicit values, range, determinism") {
  auto p = positional_encoding<float>(3, 6);
  for (int64_t k = 0; k < 3; ++k) {
    CHECK(p.at(0, 2 * k) == doctest::Approx(0.0));      // sin 0
    CHECK(p.at(0, 2 * k + 1) == doctest::Approx(1.0));  // cos 0
  }

  auto p2 = positional_encoding<float>(2, 2);
  CHECK(p2.at(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-5));  // 0.84147
  CHECK(p2.at(1, 1) == doctest::Approx(std::cos(1.0)).epsilon(1e-5));  // 0.54030

  auto big = positional_encoding<float>(50, 16);
  for (float v : big.values()) {
    CHECK(v <= 1.f);
    CHECK(v >= -1.f);
  }
  auto again = positional_encoding<float>(50, 16);
  CHECK(big.values() == again.values());

  CHECK_THROWS_AS(positional_encoding<float>(3, 5), std::invalid_argument);  // odd d
}

TEST_CASE("assemble_modality is the elementwise sum") {
  Rng rng(39);
  auto a = testutil::random_tensor({4, 3}, rng);
  auto s = testutil::random_tensor({4, 3}, rng);
  auto p = testutil::random_tensor({4, 3}, rng);

  auto zero = Tensor::zeros({4, 3});
  auto only_a = assemble_modality(a, zero, zero);
  for (size_t i = 0; i < a.values().size(); ++i) CHECK(only_a.values()[i] == a.values()[i]);

  auto ones = Tensor::filled({4, 3}, 1.f);
  auto threes = assemble_modality(ones, ones, ones);
  for (float v : threes.values()) CHECK(v == 3.f);

  auto sum = assemble_modality(a, s, p);
  for (size_t i = 0; i < a.values().size(); ++i)
    CHECK(sum.values()[i] ==
          doctest::Approx(a.values()[i] + s.values()[i] + p.values()[i]).epsilon(1e-6));
}

TEST_CASE("grad: encode/decode/reconstruction chain") {
  Rng rng(40);
  ParamStore ps;
  ps.add("enc_w", {3, 4, 6}).values() = testutil::random_values(72, rng, 0.4f);
  ps.add("enc_b", {6}).values() = testutil::random_values(6, rng, 0.4f);
  ps.add("dec_w", {3, 6, 4}).values() = testutil::random_values(72, rng, 0.4f);
  ps.add("dec_b", {4}).values() = testutil::random_values(4, rng, 0.4f);
  auto u_vals = testutil::random_values(20, rng);
  auto loss = [&](auto& p) {
    auto u = testutil::typed_const(p, {5, 4}, u_vals);
    auto latent = conv_encode(u, p.get("enc_w"), p.get("enc_b"));
    auto recon = conv_decode(latent, p.get("dec_w"), p.get("dec_b"));
    return reconstruction_loss(u, recon);
  };
  CHECK(grad_check(loss, ps).pass);
}

TEST_CASE("w/o MR replacement: affine layer keeps downstream shapes") {
  Rng rng(41);
  auto u = testutil::random_tensor({5, 7}, rng);
  auto w = testutil::random_tensor({7, 4}, rng);
  auto b = testutil::random_tensor({4}, rng);
  auto latent = add_rowvec(matmul(u, w), b);
  CHECK(latent.shape() == Shape{5, 4});
}
