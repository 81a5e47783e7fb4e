#include "distlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "distlab/random.hpp"

namespace distlab {

void ModelConfig::validate() const {
  if (vocab_size <= 0 || n_layers < 0 || n_heads <= 0 || n_kv_heads <= 0 || d_model <= 0 || d_ff <= 0 ||
      max_seq_len <= 0) {
    throw ModelError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ModelError("d_model must be divisible by n_heads");
  if (n_heads % n_kv_heads != 0) throw ModelError("n_heads must be divisible by n_kv_heads");
  if (head_dim() % 2 != 0) throw ModelError("head dimension must be even for rotary embeddings");
  if (!(rope_base > 0.0) || !(norm_eps > 0.0)) throw ModelError("rope_base and norm_eps must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
       {"n_kv_heads", c.n_kv_heads}, {"d_model", c.d_model},         {"d_ff", c.d_ff},
       {"max_seq_len", c.max_seq_len}, {"rope_base", c.rope_base},   {"norm_eps", c.norm_eps},
       {"tie_embeddings", c.tie_embeddings}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const char* const kKeys[] = {"vocab_size", "n_layers", "n_heads",  "n_kv_heads",     "d_model", "d_ff",
                                      "max_seq_len", "rope_base", "norm_eps", "tie_embeddings"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw ModelError("unknown model config key: " + key);
    }
  }
  ModelConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.n_kv_heads = j.value("n_kv_heads", c.n_heads);
  c.d_model = j.value("d_model", d.d_model);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.rope_base = j.value("rope_base", d.rope_base);
  c.norm_eps = j.value("norm_eps", d.norm_eps);
  c.tie_embeddings = j.value("tie_embeddings", d.tie_embeddings);
}

std::int64_t param_count(const ModelConfig& c) {
  c.validate();
  const std::int64_t per_layer = 2 * c.d_model * c.d_model + 2 * c.d_model * c.kv_dim() + 3 * c.d_model * c.d_ff +
                                 2 * c.d_model;
  return c.vocab_size * c.d_model + c.n_layers * per_layer + c.d_model +
         (c.tie_embeddings ? 0 : c.d_model * c.vocab_size);
}

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::zeros(const ModelConfig& c) {
  c.validate();
  using M = Matrix<Scalar>;
  ModelParams p;
  p.tok_embeddings = M::Zero(c.vocab_size, c.d_model);
  p.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (auto& l : p.layers) {
    l.wq = M::Zero(c.d_model, c.d_model);
    l.wk = M::Zero(c.d_model, c.kv_dim());
    l.wv = M::Zero(c.d_model, c.kv_dim());
    l.wo = M::Zero(c.d_model, c.d_model);
    l.w_gate = M::Zero(c.d_model, c.d_ff);
    l.w_up = M::Zero(c.d_model, c.d_ff);
    l.w_down = M::Zero(c.d_ff, c.d_model);
    l.attention_norm = M::Zero(1, c.d_model);
    l.ffn_norm = M::Zero(1, c.d_model);
  }
  p.norm = M::Zero(1, c.d_model);
  if (!c.tie_embeddings) p.output = M::Zero(c.d_model, c.vocab_size);
  return p;
}

template <typename Scalar>
template <typename Other>
ModelParams<Other> ModelParams<Scalar>::cast() const {
  ModelParams<Other> out;
  out.tok_embeddings = tok_embeddings.template cast<Other>();
  for (const auto& l : layers) {
    out.layers.push_back({l.wq.template cast<Other>(), l.wk.template cast<Other>(), l.wv.template cast<Other>(),
                          l.wo.template cast<Other>(), l.w_gate.template cast<Other>(), l.w_up.template cast<Other>(),
                          l.w_down.template cast<Other>(), l.attention_norm.template cast<Other>(),
                          l.ffn_norm.template cast<Other>()});
  }
  out.norm = norm.template cast<Other>();
  out.output = output.template cast<Other>();
  return out;
}

namespace {

template <typename Ref, typename P>
std::vector<Ref> collect(P& p) {
  std::vector<Ref> out;
  out.push_back({"tok_embeddings", &p.tok_embeddings, true});
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layers." + std::to_string(i) + ".";
    out.push_back({pre + "attention.wq", &l.wq, true});
    out.push_back({pre + "attention.wk", &l.wk, true});
    out.push_back({pre + "attention.wv", &l.wv, true});
    out.push_back({pre + "attention.wo", &l.wo, true});
    out.push_back({pre + "feed_forward.w_gate", &l.w_gate, true});
    out.push_back({pre + "feed_forward.w_up", &l.w_up, true});
    out.push_back({pre + "feed_forward.w_down", &l.w_down, true});
    out.push_back({pre + "attention_norm", &l.attention_norm, false});
    out.push_back({pre + "ffn_norm", &l.ffn_norm, false});
  }
  out.push_back({"norm", &p.norm, false});
  if (p.output.size() > 0) out.push_back({"output", &p.output, true});
  return out;
}

}  // namespace

template <typename Scalar>
std::vector<TensorRef<Scalar>> named_tensors(ModelParams<Scalar>& params) {
  return collect<TensorRef<Scalar>>(params);
}

template <typename Scalar>
std::vector<ConstTensorRef<Scalar>> named_tensors(const ModelParams<Scalar>& params) {
  return collect<ConstTensorRef<Scalar>>(params);
}

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed) {
  auto p = ModelParams<Scalar>::zeros(config);
  Rng rng(derive_seed(seed, "init"));
  for (auto& t : named_tensors(p)) {
    auto& m = *t.tensor;
    if (!t.decays) {
      m.setOnes();
      continue;
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.truncated_normal(0.02));
  }
  return p;
}

template <typename Scalar>
void check_shapes(const ModelParams<Scalar>& params, const ModelConfig& config) {
  const auto ref = ModelParams<Scalar>::zeros(config);
  const auto want = named_tensors(ref);
  const auto have = named_tensors(params);
  if (want.size() != have.size()) throw ModelError("parameter tensor count does not match config");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].tensor->rows() != have[i].tensor->rows() || want[i].tensor->cols() != have[i].tensor->cols()) {
      throw ModelError("tensor " + want[i].name + " has the wrong shape");
    }
  }
}

template <typename Scalar>
Matrix<Scalar> rope_apply(const Matrix<Scalar>& x, std::span<const std::int64_t> positions, double base,
                          std::int64_t head_dim, bool inverse) {
  if (head_dim <= 0 || head_dim % 2 != 0 || x.cols() % head_dim != 0) {
    throw ModelError("rotary embedding needs an even head dimension dividing the row width");
  }
  if (static_cast<Eigen::Index>(positions.size()) != x.rows()) throw ModelError("one position per row required");
  const std::int64_t half = head_dim / 2;
  std::vector<double> freq(static_cast<std::size_t>(half));
  for (std::int64_t i = 0; i < half; ++i) freq[i] = std::pow(base, -2.0 * static_cast<double>(i) / head_dim);

  Matrix<Scalar> out(x.rows(), x.cols());
  const double sign = inverse ? -1.0 : 1.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (std::int64_t i = 0; i < half; ++i) {
      const double angle = sign * static_cast<double>(positions[r]) * freq[i];
      const auto c = static_cast<Scalar>(std::cos(angle));
      const auto s = static_cast<Scalar>(std::sin(angle));
      for (Eigen::Index h = 0; h < x.cols(); h += head_dim) {
        const Scalar a = x(r, h + 2 * i);
        const Scalar b = x(r, h + 2 * i + 1);
        out(r, h + 2 * i) = a * c - b * s;
        out(r, h + 2 * i + 1) = a * s + b * c;
      }
    }
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> rope_apply(const Matrix<Scalar>& x, std::span<const std::int64_t> positions, double base) {
  return rope_apply<Scalar>(x, positions, base, x.cols(), false);
}

namespace {

template <typename Scalar>
Vector<Scalar> inverse_rms(const Matrix<Scalar>& x, double eps) {
  Vector<Scalar> r(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    r(i) = Scalar(1) / std::sqrt(x.row(i).squaredNorm() / static_cast<Scalar>(x.cols()) + static_cast<Scalar>(eps));
  }
  return r;
}

template <typename Scalar>
Matrix<Scalar> rms_scale(const Matrix<Scalar>& x, const Vector<Scalar>& inv_rms, const Matrix<Scalar>& gain) {
  return (x.array().colwise() * inv_rms.array()).rowwise() * gain.row(0).array();
}

/// dx for y = gain * x * inv_rms(x); accumulates dgain.
template <typename Scalar>
Matrix<Scalar> rms_backward(const Matrix<Scalar>& x, const Vector<Scalar>& inv_rms, const Matrix<Scalar>& gain,
                            const Matrix<Scalar>& dy, Matrix<Scalar>& dgain) {
  dgain.row(0) += (dy.array() * (x.array().colwise() * inv_rms.array())).colwise().sum().matrix();
  const Matrix<Scalar> dn = dy.array().rowwise() * gain.row(0).array();
  const Vector<Scalar> proj = (dn.array() * x.array()).rowwise().sum();
  const auto d = static_cast<Scalar>(x.cols());
  Matrix<Scalar> dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar r = inv_rms(i);
    dx.row(i) = r * dn.row(i) - (r * r * r / d * proj(i)) * x.row(i);
  }
  return dx;
}

template <typename Scalar>
Scalar sigmoid(Scalar v) {
  return Scalar(1) / (Scalar(1) + std::exp(-v));
}

std::vector<std::int64_t> row_positions(std::int64_t batch, std::int64_t seq_len) {
  std::vector<std::int64_t> pos(static_cast<std::size_t>(batch * seq_len));
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int64_t>(i) % seq_len;
  return pos;
}

void check_tokens(const ModelConfig& c, const TokenBatch& tokens) {
  if (tokens.batch <= 0 || tokens.seq_len <= 0 ||
      static_cast<std::int64_t>(tokens.ids.size()) != tokens.batch * tokens.seq_len) {
    throw ModelError("token batch shape is inconsistent");
  }
  if (tokens.seq_len > c.max_seq_len) throw ModelError("sequence longer than max_seq_len");
  for (auto id : tokens.ids) {
    if (id < 0 || id >= c.vocab_size) throw ModelError("token id " + std::to_string(id) + " out of range");
  }
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> forward_hidden(const ModelParams<Scalar>& params, const ModelConfig& c, const TokenBatch& tokens,
                              ForwardCache<Scalar>* cache, const DropoutOptions& dropout) {
  c.validate();
  check_tokens(c, tokens);
  const std::int64_t B = tokens.batch;
  const std::int64_t T = tokens.seq_len;
  const std::int64_t N = B * T;
  const std::int64_t hd = c.head_dim();
  const std::int64_t group = c.n_heads / c.n_kv_heads;
  const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(hd)));
  const auto positions = row_positions(B, T);
  const bool drop = dropout.attention_dropout > 0.0;
  if (drop && dropout.attention_dropout >= 1.0) throw ModelError("attention dropout must be below 1");
  const auto keep_scale = static_cast<Scalar>(drop ? 1.0 / (1.0 - dropout.attention_dropout) : 1.0);

  Matrix<Scalar> x(N, c.d_model);
  for (std::int64_t i = 0; i < N; ++i) x.row(i) = params.tok_embeddings.row(tokens.ids[i]);

  if (cache) {
    cache->tokens = tokens;
    cache->layers.assign(params.layers.size(), {});
  }

  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& L = params.layers[li];
    Vector<Scalar> r1 = inverse_rms(x, c.norm_eps);
    Matrix<Scalar> h1 = rms_scale(x, r1, L.attention_norm);
    Matrix<Scalar> q = rope_apply<Scalar>(h1 * L.wq, positions, c.rope_base, hd);
    Matrix<Scalar> k = rope_apply<Scalar>(h1 * L.wk, positions, c.rope_base, hd);
    Matrix<Scalar> v = h1 * L.wv;

    Matrix<Scalar> attn(N, c.d_model);
    std::vector<Matrix<Scalar>> probs, masks;
    Rng rng(derive_seed(dropout.seed, "attention_dropout", li));
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t h = 0; h < c.n_heads; ++h) {
        const std::int64_t g = h / group;
        const auto Q = q.block(b * T, h * hd, T, hd);
        const auto K = k.block(b * T, g * hd, T, hd);
        const auto V = v.block(b * T, g * hd, T, hd);
        Matrix<Scalar> P = (Q * K.transpose()) * scale;
        for (std::int64_t i = 0; i < T; ++i) {
          auto row = P.row(i);
          const Scalar m = row.head(i + 1).maxCoeff();
          row.head(i + 1) = (row.head(i + 1).array() - m).exp();
          row.head(i + 1) /= row.head(i + 1).sum();
          row.tail(T - i - 1).setZero();
        }
        if (drop) {
          Matrix<Scalar> M = Matrix<Scalar>::Zero(T, T);
          for (std::int64_t i = 0; i < T; ++i) {
            for (std::int64_t j = 0; j <= i; ++j) {
              M(i, j) = rng.uniform() < dropout.attention_dropout ? Scalar(0) : keep_scale;
            }
          }
          attn.block(b * T, h * hd, T, hd) = P.cwiseProduct(M) * V;
          if (cache) masks.push_back(std::move(M));
        } else {
          attn.block(b * T, h * hd, T, hd) = P * V;
        }
        if (cache) probs.push_back(std::move(P));
      }
    }

    Matrix<Scalar> x_mid = x + attn * L.wo;
    Vector<Scalar> r2 = inverse_rms(x_mid, c.norm_eps);
    Matrix<Scalar> h2 = rms_scale(x_mid, r2, L.ffn_norm);
    Matrix<Scalar> gate = h2 * L.w_gate;
    Matrix<Scalar> up = h2 * L.w_up;
    Matrix<Scalar> act = gate.unaryExpr([](Scalar a) { return a * sigmoid(a); }).cwiseProduct(up);
    Matrix<Scalar> x_out = x_mid + act * L.w_down;

    if (cache) {
      auto& cl = cache->layers[li];
      cl.x_in = std::move(x);
      cl.h1 = std::move(h1);
      cl.q = std::move(q);
      cl.k = std::move(k);
      cl.v = std::move(v);
      cl.attn = std::move(attn);
      cl.x_mid = std::move(x_mid);
      cl.h2 = std::move(h2);
      cl.gate = std::move(gate);
      cl.up = std::move(up);
      cl.act = std::move(act);
      cl.inv_rms1 = std::move(r1);
      cl.inv_rms2 = std::move(r2);
      cl.probs = std::move(probs);
      cl.drop_scale = std::move(masks);
    }
    x = std::move(x_out);
  }

  Vector<Scalar> rf = inverse_rms(x, c.norm_eps);
  Matrix<Scalar> hidden = rms_scale(x, rf, params.norm);
  if (cache) {
    cache->x_final = std::move(x);
    cache->inv_rms_final = std::move(rf);
    cache->hidden = hidden;
  }
  return hidden;
}

template <typename Scalar>
LogitsBatch<Scalar> forward(const ModelParams<Scalar>& params, const ModelConfig& c, const TokenBatch& tokens,
                            ForwardCache<Scalar>* cache, const DropoutOptions& dropout) {
  const Matrix<Scalar> hidden = forward_hidden(params, c, tokens, cache, dropout);
  LogitsBatch<Scalar> out{tokens.batch, tokens.seq_len, {}};
  if (c.tie_embeddings) {
    out.values = hidden * params.tok_embeddings.transpose();
  } else {
    out.values = hidden * params.output;
  }
  return out;
}

template <typename Scalar>
void backward_hidden(const ModelParams<Scalar>& params, const ModelConfig& c, const ForwardCache<Scalar>& cache,
                     const Matrix<Scalar>& d_hidden, ModelParams<Scalar>& grads) {
  if (!d_hidden.allFinite()) throw ModelError("non-finite upstream gradient");
  const std::int64_t B = cache.tokens.batch;
  const std::int64_t T = cache.tokens.seq_len;
  const std::int64_t N = B * T;
  const std::int64_t hd = c.head_dim();
  const std::int64_t group = c.n_heads / c.n_kv_heads;
  const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(hd)));
  const auto positions = row_positions(B, T);

  Matrix<Scalar> dx = rms_backward(cache.x_final, cache.inv_rms_final, params.norm, d_hidden, grads.norm);

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& L = params.layers[li];
    const auto& cl = cache.layers[li];
    auto& G = grads.layers[li];

    // Feed-forward block.
    G.w_down.noalias() += cl.act.transpose() * dx;
    const Matrix<Scalar> d_act = dx * L.w_down.transpose();
    Matrix<Scalar> d_gate(N, c.d_ff);
    Matrix<Scalar> d_up(N, c.d_ff);
    for (Eigen::Index i = 0; i < d_act.size(); ++i) {
      const Scalar a = cl.gate.data()[i];
      const Scalar s = sigmoid(a);
      d_up.data()[i] = d_act.data()[i] * a * s;
      d_gate.data()[i] = d_act.data()[i] * cl.up.data()[i] * s * (Scalar(1) + a * (Scalar(1) - s));
    }
    G.w_gate.noalias() += cl.h2.transpose() * d_gate;
    G.w_up.noalias() += cl.h2.transpose() * d_up;
    const Matrix<Scalar> d_h2 = d_gate * L.w_gate.transpose() + d_up * L.w_up.transpose();
    dx += rms_backward(cl.x_mid, cl.inv_rms2, L.ffn_norm, d_h2, G.ffn_norm);

    // Attention block.
    G.wo.noalias() += cl.attn.transpose() * dx;
    const Matrix<Scalar> d_attn = dx * L.wo.transpose();
    Matrix<Scalar> dq = Matrix<Scalar>::Zero(N, c.d_model);
    Matrix<Scalar> dk = Matrix<Scalar>::Zero(N, c.kv_dim());
    Matrix<Scalar> dv = Matrix<Scalar>::Zero(N, c.kv_dim());
    const bool drop = !cl.drop_scale.empty();
    std::size_t idx = 0;
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t h = 0; h < c.n_heads; ++h, ++idx) {
        const std::int64_t g = h / group;
        const auto Q = cl.q.block(b * T, h * hd, T, hd);
        const auto K = cl.k.block(b * T, g * hd, T, hd);
        const auto V = cl.v.block(b * T, g * hd, T, hd);
        const auto dO = d_attn.block(b * T, h * hd, T, hd);
        const Matrix<Scalar>& P = cl.probs[idx];
        Matrix<Scalar> dP;
        if (drop) {
          const Matrix<Scalar>& M = cl.drop_scale[idx];
          dv.block(b * T, g * hd, T, hd).noalias() += P.cwiseProduct(M).transpose() * dO;
          dP = (dO * V.transpose()).cwiseProduct(M);
        } else {
          dv.block(b * T, g * hd, T, hd).noalias() += P.transpose() * dO;
          dP = dO * V.transpose();
        }
        const Vector<Scalar> rowdot = (dP.array() * P.array()).rowwise().sum();
        const Matrix<Scalar> dS = (P.array() * (dP.array().colwise() - rowdot.array())).matrix() * scale;
        dq.block(b * T, h * hd, T, hd).noalias() += dS * K;
        dk.block(b * T, g * hd, T, hd).noalias() += dS.transpose() * Q;
      }
    }
    dq = rope_apply<Scalar>(dq, positions, c.rope_base, hd, true);
    dk = rope_apply<Scalar>(dk, positions, c.rope_base, hd, true);
    G.wq.noalias() += cl.h1.transpose() * dq;
    G.wk.noalias() += cl.h1.transpose() * dk;
    G.wv.noalias() += cl.h1.transpose() * dv;
    const Matrix<Scalar> d_h1 = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    dx += rms_backward(cl.x_in, cl.inv_rms1, L.attention_norm, d_h1, G.attention_norm);
  }

  for (std::int64_t i = 0; i < N; ++i) grads.tok_embeddings.row(cache.tokens.ids[i]) += dx.row(i);
}

template <typename Scalar>
void backward(const ModelParams<Scalar>& params, const ModelConfig& c, const ForwardCache<Scalar>& cache,
              const Matrix<Scalar>& d_logits, ModelParams<Scalar>& grads) {
  if (!d_logits.allFinite()) throw ModelError("non-finite upstream gradient");
  Matrix<Scalar> d_hidden;
  if (c.tie_embeddings) {
    grads.tok_embeddings.noalias() += d_logits.transpose() * cache.hidden;
    d_hidden = d_logits * params.tok_embeddings;
  } else {
    grads.output.noalias() += cache.hidden.transpose() * d_logits;
    d_hidden = d_logits * params.output.transpose();
  }
  backward_hidden(params, c, cache, d_hidden, grads);
}

#define DISTLAB_INSTANTIATE(S)                                                                                      \
  template struct ModelParams<S>;                                                                                   \
  template ModelParams<float> ModelParams<S>::cast<float>() const;                                                  \
  template ModelParams<double> ModelParams<S>::cast<double>() const;                                                \
  template std::vector<TensorRef<S>> named_tensors(ModelParams<S>&);                                                \
  template std::vector<ConstTensorRef<S>> named_tensors(const ModelParams<S>&);                                     \
  template ModelParams<S> init_params<S>(const ModelConfig&, std::uint64_t);                                        \
  template void check_shapes(const ModelParams<S>&, const ModelConfig&);                                            \
  template Matrix<S> rope_apply<S>(const Matrix<S>&, std::span<const std::int64_t>, double, std::int64_t, bool);   \
  template Matrix<S> rope_apply<S>(const Matrix<S>&, std::span<const std::int64_t>, double);                        \
  template Matrix<S> forward_hidden(const ModelParams<S>&, const ModelConfig&, const TokenBatch&, ForwardCache<S>*, \
                                    const DropoutOptions&);                                                         \
  template LogitsBatch<S> forward(const ModelParams<S>&, const ModelConfig&, const TokenBatch&, ForwardCache<S>*,   \
                                  const DropoutOptions&);                                                           \
  template void backward_hidden(const ModelParams<S>&, const ModelConfig&, const ForwardCache<S>&, const Matrix<S>&, \
                                ModelParams<S>&);                                                                   \
  template void backward(const ModelParams<S>&, const ModelConfig&, const ForwardCache<S>&, const Matrix<S>&,       \
                         ModelParams<S>&);

DISTLAB_INSTANTIATE(float)
DISTLAB_INSTANTIATE(double)

#undef DISTLAB_INSTANTIATE

}  // namespace distlab
