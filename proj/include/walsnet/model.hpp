// Model assembly: configuration, named parameter registry, initialization,
// and the staged forward/backward over a batch. Pipeline:
//   embed -> dropout -> (conv -> batchnorm -> relu -> maxpool2) per block
//   -> dropout -> biLSTM stack (residual add of layer 1 onto layer 2)
//   -> dropout -> linear head on [fwd last step ; bwd last step].
// Each example is computed at its true length; the only cross-example
// operation is train-mode batch normalization.
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "walsnet/common.hpp"
#include "walsnet/featurizer.hpp"
#include "walsnet/layers.hpp"
#include "walsnet/tensor.hpp"

namespace walsnet {

enum class OutputMode { Flat, Multitask };

inline const char* to_string(OutputMode m) {
  return m == OutputMode::Flat ? "flat" : "multitask";
}

inline std::optional<OutputMode> output_mode_from_string(std::string_view s) {
  if (s == "flat") return OutputMode::Flat;
  if (s == "multitask") return OutputMode::Multitask;
  return std::nullopt;
}

enum class RunMode { Train, Infer };

struct ConvSpec {
  std::size_t filters = 0;
  std::size_t width = 0;
};

struct ModelConfig {
  EmbeddingMode embedding = EmbeddingMode::ByteNgram;
  std::size_t ngram_order = 7;
  std::size_t char_order = 5;
  std::vector<ConvSpec> conv = {{20, 5}, {40, 5}, {60, 3}};  // pool 2 after each
  std::size_t lstm_layers = 2;
  std::size_t lstm_hidden = 128;
  bool residual = true;  // add layer-1 output onto layer-2 output
  double dropout = 0.5;
  OutputMode output = OutputMode::Flat;
  std::size_t n_classes = 0;

  void validate() const {
    if (n_classes == 0) throw ConfigError("model needs at least one output class");
    if (lstm_layers == 0) throw ConfigError("model needs at least one LSTM layer");
    if (lstm_hidden == 0) throw ConfigError("LSTM width must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    for (const auto& c : conv)
      if (c.filters == 0 || c.width == 0) throw ConfigError("conv spec must be positive");
  }
};

// Fewest input tokens an example may have: inverts pool halving and conv
// shrinkage from a final length of 1.
inline std::size_t min_input_tokens(const ModelConfig& cfg) {
  std::size_t need = 1;
  for (std::size_t b = cfg.conv.size(); b-- > 0;) {
    need = 2 * need;                  // maxpool2 floor division
    need += cfg.conv[b].width - 1;    // valid convolution
  }
  return need;
}

inline std::size_t conv_stack_output_length(const ModelConfig& cfg, std::size_t T) {
  for (const auto& c : cfg.conv) {
    if (T < c.width) throw ConfigError("sequence too short");
    T = T - c.width + 1;
    if (T < 2) throw ConfigError("sequence too short");
    T /= 2;
  }
  return T;
}

template <class Real>
struct ModelParams {
  Tensor<Real> embedding;
  std::vector<Conv1d<Real>> conv;
  std::vector<BatchNorm<Real>> bn;
  std::vector<BiLstm<Real>> lstm;
  Tensor<Real> head_w;  // [C, 2H]
  Tensor<Real> head_b;  // [C]
};

// Calls fn(name, tensor, trainable) for every parameter array exactly once,
// in a fixed order. Running statistics are visited as non-trainable.
template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
  fn("embedding", p.embedding, true);
  for (std::size_t b = 0; b < p.conv.size(); ++b) {
    const std::string base = "conv" + std::to_string(b);
    fn(base + ".kernel", p.conv[b].kernel, true);
    fn(base + ".bias", p.conv[b].bias, true);
    const std::string bnb = "bn" + std::to_string(b);
    fn(bnb + ".gamma", p.bn[b].gamma, true);
    fn(bnb + ".beta", p.bn[b].beta, true);
    fn(bnb + ".running_mean", p.bn[b].running_mean, false);
    fn(bnb + ".running_var", p.bn[b].running_var, false);
  }
  for (std::size_t l = 0; l < p.lstm.size(); ++l) {
    const std::string base = "lstm" + std::to_string(l);
    fn(base + ".fwd.W", p.lstm[l].fwd.W, true);
    fn(base + ".fwd.U", p.lstm[l].fwd.U, true);
    fn(base + ".fwd.b", p.lstm[l].fwd.b, true);
    fn(base + ".bwd.W", p.lstm[l].bwd.W, true);
    fn(base + ".bwd.U", p.lstm[l].bwd.U, true);
    fn(base + ".bwd.b", p.lstm[l].bwd.b, true);
  }
  fn("head.weight", p.head_w, true);
  fn("head.bias", p.head_b, true);
}

// Recurrent weight matrices (not biases) carry the L2 penalty.
inline bool is_recurrent_weight(std::string_view name) {
  if (name.rfind("lstm", 0) != 0) return false;
  return name.size() >= 2 &&
         (name.compare(name.size() - 2, 2, ".W") == 0 || name.compare(name.size() - 2, 2, ".U") == 0);
}

namespace detail {

template <class Real>
void glorot_uniform(Tensor<Real>& t, std::size_t fan_in, std::size_t fan_out,
                    std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.data) v = static_cast<Real>(dist(rng));
}

}  // namespace detail

// Zero-valued parameter arrays with the shapes the config dictates.
template <class Real>
ModelParams<Real> make_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<Real> p;
  p.embedding = Tensor<Real>({embedding_rows(cfg.embedding), embedding_dim(cfg.embedding)});
  std::size_t in_ch = embedding_dim(cfg.embedding);
  for (const auto& spec : cfg.conv) {
    Conv1d<Real> conv;
    conv.kernel = Tensor<Real>({spec.filters, spec.width, in_ch});
    conv.bias = Tensor<Real>({spec.filters});
    p.conv.push_back(std::move(conv));
    BatchNorm<Real> bn;
    bn.gamma = Tensor<Real>({spec.filters});
    bn.beta = Tensor<Real>({spec.filters});
    bn.running_mean = Tensor<Real>({spec.filters});
    bn.running_var = Tensor<Real>({spec.filters});
    p.bn.push_back(std::move(bn));
    in_ch = spec.filters;
  }
  const std::size_t H = cfg.lstm_hidden;
  std::size_t lstm_in = in_ch;
  for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
    BiLstm<Real> layer;
    for (auto* dir : {&layer.fwd, &layer.bwd}) {
      dir->W = Tensor<Real>({4 * H, lstm_in});
      dir->U = Tensor<Real>({4 * H, H});
      dir->b = Tensor<Real>({4 * H});
    }
    p.lstm.push_back(std::move(layer));
    lstm_in = 2 * H;
  }
  p.head_w = Tensor<Real>({cfg.n_classes, 2 * H});
  p.head_b = Tensor<Real>({cfg.n_classes});
  return p;
}

template <class Real>
ModelParams<Real> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<Real> p = make_params<Real>(cfg);
  p.embedding = init_embedding<Real>(cfg.embedding, seed);
  for (std::size_t b = 0; b < cfg.conv.size(); ++b) {
    auto rng = make_rng(seed, "conv", b);
    const auto& spec = cfg.conv[b];
    const std::size_t in_ch = p.conv[b].kernel.shape[2];
    detail::glorot_uniform(p.conv[b].kernel, spec.width * in_ch, spec.width * spec.filters, rng);
    p.bn[b].gamma.fill(Real(1));
    p.bn[b].running_var.fill(Real(1));
  }
  const std::size_t H = cfg.lstm_hidden;
  for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
    for (auto* dir : {&p.lstm[l].fwd, &p.lstm[l].bwd}) {
      const std::size_t which = dir == &p.lstm[l].bwd;
      auto rng = make_rng(seed, "lstm", l, which);
      detail::glorot_uniform(dir->W, dir->W.shape[1], 4 * H, rng);
      detail::glorot_uniform(dir->U, H, 4 * H, rng);
    }
  }
  auto rng = make_rng(seed, "head");
  detail::glorot_uniform(p.head_w, 2 * H, cfg.n_classes, rng);
  return p;
}

template <class Real>
ModelParams<Real> zero_grads(const ModelParams<Real>& p) {
  ModelParams<Real> g;
  g.embedding = zeros_like(p.embedding);
  for (const auto& c : p.conv)
    g.conv.push_back(Conv1d<Real>{zeros_like(c.kernel), zeros_like(c.bias)});
  for (const auto& b : p.bn)
    g.bn.push_back(BatchNorm<Real>{zeros_like(b.gamma), zeros_like(b.beta),
                                   zeros_like(b.running_mean), zeros_like(b.running_var)});
  for (const auto& l : p.lstm) {
    BiLstm<Real> gl;
    gl.fwd = LstmDir<Real>{zeros_like(l.fwd.W), zeros_like(l.fwd.U), zeros_like(l.fwd.b)};
    gl.bwd = LstmDir<Real>{zeros_like(l.bwd.W), zeros_like(l.bwd.U), zeros_like(l.bwd.b)};
    g.lstm.push_back(std::move(gl));
  }
  g.head_w = zeros_like(p.head_w);
  g.head_b = zeros_like(p.head_b);
  return g;
}

// ---------------------------------------------------------------------------
// Forward/backward caches.

template <class Real>
struct ConvBlockCache {
  std::vector<Tensor<Real>> conv_in, conv_out, bn_out, relu_out, pool_out;
  std::vector<PoolCache<Real>> pool;
  BnCache<Real> bn_stats;
};

template <class Real>
struct ExampleCache {
  Tensor<Real> embedded, x0;
  DropoutMask<Real> drop_embed, drop_pool, drop_out;
  std::vector<DropoutMask<Real>> drop_between;  // before LSTM layers 2..L
  Tensor<Real> lstm_in;
  std::vector<Tensor<Real>> lstm_layer_in;   // input fed to each LSTM layer
  std::vector<Tensor<Real>> lstm_layer_out;  // raw biLSTM output per layer
  std::vector<BiLstmCache<Real>> lstm_cache;
  Tensor<Real> out_seq;   // after residual
  Tensor<Real> out_drop;  // after final dropout
  std::vector<Real> head_in;
};

template <class Real>
struct BatchCache {
  std::vector<ExampleCache<Real>> ex;
  std::vector<ConvBlockCache<Real>> blocks;
};

// Dropout site ids feed the per-site seed derivation.
namespace dropseed {
inline constexpr std::uint64_t kEmbed = 0;
inline constexpr std::uint64_t kAfterPool = 1;
inline constexpr std::uint64_t kBetweenLstm = 2;  // +layer index
inline constexpr std::uint64_t kOutput = 100;
}  // namespace dropseed

// Forward over a featurized batch. `dropout_seed` must already encode the
// step; per-site masks derive from (dropout_seed, site, slot). Train mode
// updates the batchnorm running statistics in `params`; infer mode never
// writes to it.
template <class Real>
Tensor<Real> model_forward(ModelParams<Real>& params, const ModelConfig& cfg,
                           const std::vector<TokenSeq>& batch, RunMode mode,
                           std::uint64_t dropout_seed, BatchCache<Real>* cache_out = nullptr) {
  cfg.validate();
  const bool train = mode == RunMode::Train;
  const std::size_t B = batch.size();
  if (B == 0) throw ConfigError("empty batch");
  const std::size_t min_tokens = min_input_tokens(cfg);
  for (const auto& seq : batch) {
    if (seq.empty()) throw ConfigError("empty sequence");
    if (seq.size() < min_tokens) throw ConfigError("sequence too short");
  }

  BatchCache<Real> local;
  BatchCache<Real>& cache = cache_out ? *cache_out : local;
  cache.ex.assign(B, {});
  cache.blocks.assign(cfg.conv.size(), {});

  for (std::size_t e = 0; e < B; ++e) {
    auto& ex = cache.ex[e];
    ex.embedded = embed_sequence(params.embedding, batch[e]);
    ex.x0 = dropout_forward(ex.embedded, cfg.dropout, train,
                            derive_seed(dropout_seed, "drop", dropseed::kEmbed, e),
                            &ex.drop_embed);
  }

  for (std::size_t b = 0; b < cfg.conv.size(); ++b) {
    auto& blk = cache.blocks[b];
    blk.conv_in.resize(B);
    blk.conv_out.resize(B);
    blk.bn_out.resize(B);
    blk.relu_out.resize(B);
    blk.pool_out.resize(B);
    blk.pool.resize(B);
    for (std::size_t e = 0; e < B; ++e) {
      blk.conv_in[e] = b == 0 ? cache.ex[e].x0 : cache.blocks[b - 1].pool_out[e];
      blk.conv_out[e] = params.conv[b].forward(blk.conv_in[e]);
    }
    if (train) {
      blk.bn_stats = batchnorm_forward_train(params.bn[b], blk.conv_out, blk.bn_out);
    } else {
      for (std::size_t e = 0; e < B; ++e)
        blk.bn_out[e] = batchnorm_forward_infer(params.bn[b], blk.conv_out[e]);
    }
    for (std::size_t e = 0; e < B; ++e) {
      blk.relu_out[e] = relu(blk.bn_out[e]);
      blk.pool_out[e] = maxpool2(blk.relu_out[e], blk.pool[e]);
    }
  }

  const std::size_t H = cfg.lstm_hidden;
  Tensor<Real> logits({B, cfg.n_classes});
  for (std::size_t e = 0; e < B; ++e) {
    auto& ex = cache.ex[e];
    const Tensor<Real>& conv_top = cfg.conv.empty() ? ex.x0 : cache.blocks.back().pool_out[e];
    ex.lstm_in = cfg.conv.empty()
                     ? conv_top
                     : dropout_forward(conv_top, cfg.dropout, train,
                                       derive_seed(dropout_seed, "drop", dropseed::kAfterPool, e),
                                       &ex.drop_pool);
    ex.lstm_layer_in.resize(cfg.lstm_layers);
    ex.lstm_layer_out.resize(cfg.lstm_layers);
    ex.lstm_cache.assign(cfg.lstm_layers, {});
    ex.drop_between.resize(cfg.lstm_layers);
    for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
      if (l == 0) {
        ex.lstm_layer_in[l] = ex.lstm_in;
      } else {
        ex.lstm_layer_in[l] = dropout_forward(
            ex.lstm_layer_out[l - 1], cfg.dropout, train,
            derive_seed(dropout_seed, "drop", dropseed::kBetweenLstm + l, e), &ex.drop_between[l]);
      }
      ex.lstm_layer_out[l] = bilstm_forward(params.lstm[l], ex.lstm_layer_in[l], ex.lstm_cache[l]);
    }
    ex.out_seq = ex.lstm_layer_out.back();
    if (cfg.residual && cfg.lstm_layers >= 2) {
      const Tensor<Real>& first = ex.lstm_layer_out[0];
      for (std::size_t i = 0; i < ex.out_seq.data.size(); ++i) ex.out_seq.data[i] += first.data[i];
    }
    ex.out_drop = dropout_forward(ex.out_seq, cfg.dropout, train,
                                  derive_seed(dropout_seed, "drop", dropseed::kOutput, e),
                                  &ex.drop_out);
    const std::size_t T = ex.out_drop.shape[0];
    ex.head_in.assign(2 * H, Real(0));
    const Real* last_fwd = ex.out_drop.row(T - 1);
    const Real* first_bwd = ex.out_drop.row(0);
    for (std::size_t k = 0; k < H; ++k) {
      ex.head_in[k] = last_fwd[k];
      ex.head_in[H + k] = first_bwd[H + k];
    }
    Real* lr = logits.row(e);
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
      const Real* w = params.head_w.row(c);
      Real acc = params.head_b.data[c];
      for (std::size_t k = 0; k < 2 * H; ++k) acc += w[k] * ex.head_in[k];
      lr[c] = acc;
    }
  }
  return logits;
}

// Backward for a train-mode forward that filled `cache`. Accumulates into
// `grads` (same registry as params; running-stat slots stay untouched).
template <class Real>
void model_backward(const ModelParams<Real>& params, const ModelConfig& cfg,
                    const std::vector<TokenSeq>& batch, const BatchCache<Real>& cache,
                    const Tensor<Real>& d_logits, ModelParams<Real>& grads) {
  const std::size_t B = batch.size();
  const std::size_t H = cfg.lstm_hidden;
  std::vector<Tensor<Real>> d_pool_top(B);  // gradient reaching the conv stack output

  for (std::size_t e = 0; e < B; ++e) {
    const auto& ex = cache.ex[e];
    const Real* gl = d_logits.row(e);
    std::vector<Real> d_head_in(2 * H, Real(0));
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
      const Real g = gl[c];
      grads.head_b.data[c] += g;
      if (g == Real(0)) continue;
      Real* dw = grads.head_w.row(c);
      const Real* w = params.head_w.row(c);
      for (std::size_t k = 0; k < 2 * H; ++k) {
        dw[k] += g * ex.head_in[k];
        d_head_in[k] += g * w[k];
      }
    }
    Tensor<Real> d_out_drop(ex.out_drop.shape);
    const std::size_t T = ex.out_drop.shape[0];
    for (std::size_t k = 0; k < H; ++k) {
      d_out_drop.at(T - 1, k) = d_head_in[k];
      d_out_drop.at(0, H + k) += d_head_in[H + k];
    }
    Tensor<Real> d_out_seq = dropout_backward(d_out_drop, ex.drop_out);

    std::vector<Tensor<Real>> d_layer_out(cfg.lstm_layers);
    d_layer_out.back() = d_out_seq;
    if (cfg.residual && cfg.lstm_layers >= 2) d_layer_out[0] = d_out_seq;
    Tensor<Real> d_lstm_in;
    for (std::size_t l = cfg.lstm_layers; l-- > 0;) {
      Tensor<Real> d_in = bilstm_backward(params.lstm[l], ex.lstm_layer_in[l], ex.lstm_cache[l],
                                          d_layer_out[l], grads.lstm[l]);
      if (l == 0) {
        d_lstm_in = std::move(d_in);
      } else {
        Tensor<Real> d_prev = dropout_backward(d_in, ex.drop_between[l]);
        if (d_layer_out[l - 1].data.empty()) {
          d_layer_out[l - 1] = std::move(d_prev);
        } else {
          for (std::size_t i = 0; i < d_prev.data.size(); ++i)
            d_layer_out[l - 1].data[i] += d_prev.data[i];
        }
      }
    }
    d_pool_top[e] = cfg.conv.empty() ? std::move(d_lstm_in)
                                     : dropout_backward(d_lstm_in, ex.drop_pool);
  }

  std::vector<Tensor<Real>> d_next = std::move(d_pool_top);
  for (std::size_t b = cfg.conv.size(); b-- > 0;) {
    const auto& blk = cache.blocks[b];
    std::vector<Tensor<Real>> d_relu(B), d_bn(B), d_conv(B);
    for (std::size_t e = 0; e < B; ++e) {
      d_relu[e] = maxpool2_backward(blk.relu_out[e], d_next[e], blk.pool[e]);
      d_bn[e] = relu_backward(blk.bn_out[e], d_relu[e]);
    }
    batchnorm_backward_train(params.bn[b], blk.conv_out, d_bn, blk.bn_stats, d_conv,
                             grads.bn[b].gamma, grads.bn[b].beta);
    d_next.assign(B, {});
    for (std::size_t e = 0; e < B; ++e)
      d_next[e] = params.conv[b].backward(blk.conv_in[e], d_conv[e], grads.conv[b].kernel,
                                          grads.conv[b].bias);
  }

  for (std::size_t e = 0; e < B; ++e) {
    Tensor<Real> d_embedded = dropout_backward(d_next[e], cache.ex[e].drop_embed);
    embed_sequence_backward(batch[e], d_embedded, grads.embedding);
  }
}

}  // namespace walsnet
