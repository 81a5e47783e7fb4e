#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace distlab {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct ModelError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Architecture hyperparameters of the Llama-style decoder.
struct ModelConfig {
  std::int64_t vocab_size = 16000;
  std::int64_t n_layers = 32;
  std::int64_t n_heads = 15;
  std::int64_t n_kv_heads = 5;
  std::int64_t d_model = 960;
  std::int64_t d_ff = 2560;
  std::int64_t max_seq_len = 256;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  bool tie_embeddings = false;

  std::int64_t head_dim() const { return d_model / n_heads; }
  std::int64_t kv_dim() const { return n_kv_heads * head_dim(); }

  /// Throws ModelError when divisibility or positivity constraints fail.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Exact scalar parameter count of the layout below.
std::int64_t param_count(const ModelConfig& config);

template <typename Scalar>
struct LayerParams {
  Matrix<Scalar> wq;  // d_model x d_model
  Matrix<Scalar> wk;  // d_model x kv_dim
  Matrix<Scalar> wv;  // d_model x kv_dim
  Matrix<Scalar> wo;  // d_model x d_model
  Matrix<Scalar> w_gate;  // d_model x d_ff
  Matrix<Scalar> w_up;    // d_model x d_ff
  Matrix<Scalar> w_down;  // d_ff x d_model
  Matrix<Scalar> attention_norm;  // 1 x d_model
  Matrix<Scalar> ffn_norm;        // 1 x d_model
};

template <typename Scalar>
struct ModelParams {
  Matrix<Scalar> tok_embeddings;  // vocab x d_model
  std::vector<LayerParams<Scalar>> layers;
  Matrix<Scalar> norm;    // 1 x d_model
  Matrix<Scalar> output;  // d_model x vocab, empty when tied

  /// Zero-valued tensors shaped for the config (gradient buffers, moments).
  static ModelParams zeros(const ModelConfig& config);

  template <typename Other>
  ModelParams<Other> cast() const;
};

template <typename Scalar>
struct TensorRef {
  std::string name;
  Matrix<Scalar>* tensor;
  bool decays;  // weight decay applies (matrices yes, norm gains no)
};

template <typename Scalar>
struct ConstTensorRef {
  std::string name;
  const Matrix<Scalar>* tensor;
  bool decays;
};

/// Every tensor in a fixed order with its canonical name.
template <typename Scalar>
std::vector<TensorRef<Scalar>> named_tensors(ModelParams<Scalar>& params);
template <typename Scalar>
std::vector<ConstTensorRef<Scalar>> named_tensors(const ModelParams<Scalar>& params);

/// Truncated normal (std 0.02, cut at 3 std) for matrices, ones for norm
/// gains. Bit-identical for a given seed.
template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed);

/// Checks tensor shapes against the config; throws ModelError.
template <typename Scalar>
void check_shapes(const ModelParams<Scalar>& params, const ModelConfig& config);

/// Rotates consecutive pairs (2i, 2i+1) of every head_dim-wide block of each
/// row by position * base^(-2i/head_dim). Rows are positions. `inverse`
/// rotates by the negated angle (the transpose, used for gradients).
template <typename Scalar>
Matrix<Scalar> rope_apply(const Matrix<Scalar>& x, std::span<const std::int64_t> positions, double base,
                          std::int64_t head_dim, bool inverse = false);
template <typename Scalar>
Matrix<Scalar> rope_apply(const Matrix<Scalar>& x, std::span<const std::int64_t> positions, double base);

/// Row-major batch of token ids: batch sequences of equal length.
struct TokenBatch {
  std::int64_t batch = 0;
  std::int64_t seq_len = 0;
  std::vector<std::int32_t> ids;

  std::int32_t at(std::int64_t b, std::int64_t t) const { return ids[b * seq_len + t]; }
};

/// Logits laid out as (batch * seq_len) x vocab; row b*seq_len + t.
template <typename Scalar>
struct LogitsBatch {
  std::int64_t batch = 0;
  std::int64_t seq_len = 0;
  Matrix<Scalar> values;
};

struct DropoutOptions {
  double attention_dropout = 0.0;
  std::uint64_t seed = 0;
};

/// Activations kept by the forward pass for the backward pass.
template <typename Scalar>
struct ForwardCache {
  struct Layer {
    Matrix<Scalar> x_in, h1, q, k, v, attn, x_mid, h2, gate, up, act;
    Vector<Scalar> inv_rms1, inv_rms2;
    std::vector<Matrix<Scalar>> probs;        // per (batch, head), seq x seq
    std::vector<Matrix<Scalar>> drop_scale;   // empty when dropout is off
  };
  TokenBatch tokens;
  std::vector<Layer> layers;
  Matrix<Scalar> x_final;
  Vector<Scalar> inv_rms_final;
  Matrix<Scalar> hidden;  // final-normed states, (batch*seq) x d_model
};

/// Final-normed hidden states (pre output head). Fills `cache` when given.
template <typename Scalar>
Matrix<Scalar> forward_hidden(const ModelParams<Scalar>& params, const ModelConfig& config, const TokenBatch& tokens,
                              ForwardCache<Scalar>* cache = nullptr, const DropoutOptions& dropout = {});

template <typename Scalar>
LogitsBatch<Scalar> forward(const ModelParams<Scalar>& params, const ModelConfig& config, const TokenBatch& tokens,
                            ForwardCache<Scalar>* cache = nullptr, const DropoutOptions& dropout = {});

/// Accumulates into `grads` the gradient given dL/d(hidden) for a cached pass.
template <typename Scalar>
void backward_hidden(const ModelParams<Scalar>& params, const ModelConfig& config, const ForwardCache<Scalar>& cache,
                     const Matrix<Scalar>& d_hidden, ModelParams<Scalar>& grads);

/// Accumulates into `grads` the gradient given dL/d(logits) for a cached pass.
/// Throws ModelError on a non-finite upstream gradient.
template <typename Scalar>
void backward(const ModelParams<Scalar>& params, const ModelConfig& config, const ForwardCache<Scalar>& cache,
              const Matrix<Scalar>& d_logits, ModelParams<Scalar>& grads);

}  // namespace distlab
