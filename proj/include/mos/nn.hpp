#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mos/errors.hpp"
#include "mos/random.hpp"
#include "mos/tensor.hpp"

namespace mos {

// Trainable leaf with truncated-normal(0.02) entries.
template <typename T>
Tensor<T> init_projection(Shape shape, Rng& rng, double sigma = 0.02) {
  std::vector<T> values(shape_size(shape));
  for (auto& v : values) v = static_cast<T>(rng.truncated_normal(sigma));
  return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
Tensor<T> init_constant(Shape shape, T value) {
  const auto n = shape_size(shape);
  return Tensor<T>(std::move(shape), std::vector<T>(n, value), true);
}

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static LinearParams init(std::size_t in, std::size_t out, Rng& rng) {
    return {init_projection<T>({in, out}, rng), init_constant<T>({out}, T(0))};
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  return add_bias(matmul(x, p.weight), p.bias);
}

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;

  static LayerNormParams init(std::size_t d) { return {init_constant<T>({d}, T(1)), init_constant<T>({d}, T(0))}; }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
  return layer_norm(x, p.gain, p.bias);
}

inline constexpr std::size_t kMlpExpansion = 4;

// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
template <typename T>
struct MhsaBlockParams {
  LayerNormParams<T> ln1;
  LinearParams<T> query, key, value, out;
  LayerNormParams<T> ln2;
  LinearParams<T> fc1, fc2;

  static MhsaBlockParams init(std::size_t d, Rng& rng) {
    MhsaBlockParams p;
    p.ln1 = LayerNormParams<T>::init(d);
    p.query = LinearParams<T>::init(d, d, rng);
    p.key = LinearParams<T>::init(d, d, rng);
    p.value = LinearParams<T>::init(d, d, rng);
    p.out = LinearParams<T>::init(d, d, rng);
    p.ln2 = LayerNormParams<T>::init(d);
    p.fc1 = LinearParams<T>::init(d, kMlpExpansion * d, rng);
    p.fc2 = LinearParams<T>::init(kMlpExpansion * d, d, rng);
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    ln1.visit(prefix + ".ln1", f);
    query.visit(prefix + ".attn.query", f);
    key.visit(prefix + ".attn.key", f);
    value.visit(prefix + ".attn.value", f);
    out.visit(prefix + ".attn.out", f);
    ln2.visit(prefix + ".ln2", f);
    fc1.visit(prefix + ".mlp.fc1", f);
    fc2.visit(prefix + ".mlp.fc2", f);
  }
};

template <typename T>
Tensor<T> mhsa_block(const Tensor<T>& tokens, const MhsaBlockParams<T>& p, std::size_t heads,
                     AttentionProbe<T>* probe = nullptr) {
  const std::size_t d = tokens.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("mhsa_block: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const auto h = layer_norm(tokens, p.ln1);
  const auto attn = multi_head_attention(linear(h, p.query), linear(h, p.key), linear(h, p.value), heads, probe);
  const auto x = add(tokens, linear(attn, p.out));
  const auto m = linear(gelu(linear(layer_norm(x, p.ln2), p.fc1)), p.fc2);
  return add(x, m);
}

// Interleaved sin/cos encoding with frequency base 10000:
// out[2i] = sin(pos / 10000^(2i/d)), out[2i+1] = cos(same).
template <typename T>
Tensor<T> sinusoidal_encoding(std::size_t position, std::size_t d) {
  if (d == 0 || d % 2 != 0) {
    throw ConfigError("sinusoidal_encoding: width must be even and positive, got " + std::to_string(d));
  }
  std::vector<T> out(d);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(d));
    const double angle = static_cast<double>(position) * freq;
    out[2 * i] = static_cast<T>(std::sin(angle));
    out[2 * i + 1] = static_cast<T>(std::cos(angle));
  }
  return Tensor<T>({d}, std::move(out));
}

}  // namespace mos
