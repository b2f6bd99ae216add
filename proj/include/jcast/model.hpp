// model.hpp -- transformer encoder-decoder with Conv2d time subsampling and
// per-language heads (CTC projection, decoder embedding, decoder output).
// Encoder and decoder bodies hold no language-specific parameters.
#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "jcast/common.hpp"
#include "jcast/data.hpp"
#include "jcast/tensor.hpp"

namespace jcast::model {

struct LengthError : DataError {
  using DataError::DataError;
};

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t heads = 4;
  std::size_t enc_layers = 4;
  std::size_t dec_layers = 2;
  std::size_t conv_channels = 32;
  std::size_t conv_blocks = 1;  // kernel (3,3), stride 2; time unpadded, features same-padded
  double dropout_ff = 0.1;
  double dropout_att = 0.0;
  std::size_t input_dim = 8;
  double label_smoothing = 0.1;

  static ModelConfig desk(std::size_t input_dim = 8) {
    ModelConfig c;
    c.input_dim = input_dim;
    return c;
  }
  static ModelConfig full(std::size_t input_dim = 83) {
    ModelConfig c;
    c.d_model = 256;
    c.d_ff = 2048;
    c.heads = 4;
    c.enc_layers = 12;
    c.dec_layers = 6;
    c.conv_channels = 256;
    c.conv_blocks = 1;
    c.input_dim = input_dim;
    return c;
  }

  void validate() const {
    if (d_model == 0 || d_ff == 0 || heads == 0 || enc_layers == 0 || dec_layers == 0 ||
        conv_channels == 0 || conv_blocks == 0 || input_dim == 0)
      throw ConfigError("ModelConfig: all dims must be >= 1");
    if (d_model % heads != 0) throw ConfigError("ModelConfig: d_model must be divisible by heads");
    if (dropout_ff < 0 || dropout_ff >= 1 || dropout_att < 0 || dropout_att >= 1)
      throw ConfigError("ModelConfig: dropout rates must be in [0,1)");
  }

  // frames required so every conv block sees >= 3 time steps
  std::size_t min_frames() const {
    std::size_t t = 1;
    for (std::size_t b = 0; b < conv_blocks; ++b) t = (t - 1) * 2 + 3;
    return t;
  }
  std::size_t subsampled_len(std::size_t frames) const {
    for (std::size_t b = 0; b < conv_blocks; ++b) {
      if (frames < 3)
        throw LengthError("input of " + std::to_string(frames) +
                          " frames too short for conv stack; need >= " +
                          std::to_string(min_frames()));
      frames = (frames - 3) / 2 + 1;
    }
    return frames;
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},       {"d_ff", c.d_ff},
                     {"heads", c.heads},           {"enc_layers", c.enc_layers},
                     {"dec_layers", c.dec_layers}, {"conv_channels", c.conv_channels},
                     {"conv_blocks", c.conv_blocks}, {"dropout_ff", c.dropout_ff},
                     {"dropout_att", c.dropout_att}, {"input_dim", c.input_dim},
                     {"label_smoothing", c.label_smoothing}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.d_model = j.value("d_model", d.d_model);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.heads = j.value("heads", d.heads);
  c.enc_layers = j.value("enc_layers", d.enc_layers);
  c.dec_layers = j.value("dec_layers", d.dec_layers);
  c.conv_channels = j.value("conv_channels", d.conv_channels);
  c.conv_blocks = j.value("conv_blocks", d.conv_blocks);
  c.dropout_ff = j.value("dropout_ff", d.dropout_ff);
  c.dropout_att = j.value("dropout_att", d.dropout_att);
  c.input_dim = j.value("input_dim", d.input_dim);
  c.label_smoothing = j.value("label_smoothing", d.label_smoothing);
}

// Replayable dropout stream: one base seed per forward pass, a counter per op.
struct RunContext {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  std::uint64_t counter = 0;
  std::uint64_t next_seed() { return mix_seed(dropout_seed, counter++); }
};

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

struct ModelParams {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;            // name -> leaf tensor
  std::map<std::string, data::Vocabulary> vocabs;   // language -> vocabulary
  std::set<std::string> frozen;                     // tensor names excluded from updates

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool has_language(const std::string& lang) const { return vocabs.count(lang) > 0; }
  const data::Vocabulary& vocab(const std::string& lang) const {
    auto it = vocabs.find(lang);
    if (it == vocabs.end()) throw ContractError("language '" + lang + "' not registered");
    return it->second;
  }
  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& [k, t] : tensors) n += t.size();
    return n;
  }
  void set_requires_grad(bool b) {
    for (auto& [k, t] : tensors) t.set_requires_grad(b);
  }
  void zero_grad() {
    for (auto& [k, t] : tensors) t.zero_grad();
  }
  ModelParams clone() const {
    ModelParams out;
    out.config = config;
    out.vocabs = vocabs;
    out.frozen = frozen;
    for (const auto& [k, t] : tensors) out.tensors.emplace(k, t.clone());
    return out;
  }
};

namespace init {

// Each tensor gets its own stream keyed by (seed, name) so re-initializing a
// single head is reproducible regardless of creation order.
inline Tensor xavier(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                     std::uint64_t seed, const std::string& name) {
  Rng rng(mix_seed(seed, hash_str(name)));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor::from_data(std::move(shape), std::move(v));
}

inline Tensor normal(std::vector<std::size_t> shape, double stddev, std::uint64_t seed,
                     const std::string& name) {
  Rng rng(mix_seed(seed, hash_str(name)));
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from_data(std::move(shape), std::move(v));
}

}  // namespace init

inline std::size_t conv_out_dim(std::size_t d) { return (d - 1) / 2 + 1; }  // feature same-pad

inline std::size_t encoder_feat_dim(const ModelConfig& c) {
  std::size_t d = c.input_dim;
  for (std::size_t b = 0; b < c.conv_blocks; ++b) d = conv_out_dim(d);
  return c.conv_channels * d;
}

namespace detail {

inline void add_linear(ModelParams& p, const std::string& name, std::size_t in, std::size_t out,
                       std::uint64_t seed) {
  p.tensors.emplace(name + ".w", init::xavier({in, out}, in, out, seed, name + ".w"));
  p.tensors.emplace(name + ".b", Tensor::zeros({out}));
}
inline void add_layer_norm(ModelParams& p, const std::string& name, std::size_t d) {
  p.tensors.emplace(name + ".g", Tensor::full({d}, 1.0));
  p.tensors.emplace(name + ".b", Tensor::zeros({d}));
}
inline void add_attention(ModelParams& p, const std::string& name, std::size_t d,
                          std::uint64_t seed) {
  for (const char* w : {".wq", ".wk", ".wv", ".wo"}) add_linear(p, name + w, d, d, seed);
}
inline void add_ff(ModelParams& p, const std::string& name, std::size_t d, std::size_t dff,
                   std::uint64_t seed) {
  add_linear(p, name + ".l1", d, dff, seed);
  add_linear(p, name + ".l2", dff, d, seed);
}

}  // namespace detail

// Initialize the three per-language heads for `lang`.
inline void add_language_heads(ModelParams& p, const data::Vocabulary& vocab, std::uint64_t seed) {
  const std::string lang = vocab.language();
  if (p.vocabs.count(lang)) throw ConfigError("language '" + lang + "' already registered");
  const std::size_t d = p.config.d_model, V = vocab.size();
  p.vocabs.emplace(lang, vocab);
  detail::add_linear(p, "head." + lang + ".ctc", d, V, seed);
  p.tensors.emplace("head." + lang + ".emb",
                    init::normal({V, d}, std::pow(static_cast<double>(d), -0.5), seed,
                                 "head." + lang + ".emb"));
  detail::add_linear(p, "head." + lang + ".out", d, V, seed);
}

inline ModelParams init_params(const ModelConfig& config,
                               const std::vector<data::Vocabulary>& vocabs, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  const std::size_t d = config.d_model;
  for (std::size_t b = 0; b < config.conv_blocks; ++b) {
    const std::size_t in_ch = b == 0 ? 1 : config.conv_channels;
    const std::string name = "enc.conv" + std::to_string(b);
    p.tensors.emplace(name + ".w", init::xavier({in_ch * 9, config.conv_channels}, in_ch * 9,
                                                config.conv_channels, seed, name + ".w"));
    p.tensors.emplace(name + ".b", Tensor::zeros({config.conv_channels}));
  }
  detail::add_linear(p, "enc.in_proj", encoder_feat_dim(config), d, seed);
  for (std::size_t l = 0; l < config.enc_layers; ++l) {
    const std::string base = "enc.l" + std::to_string(l);
    detail::add_layer_norm(p, base + ".ln1", d);
    detail::add_attention(p, base + ".attn", d, seed);
    detail::add_layer_norm(p, base + ".ln2", d);
    detail::add_ff(p, base + ".ff", d, config.d_ff, seed);
  }
  detail::add_layer_norm(p, "enc.ln_out", d);
  for (std::size_t l = 0; l < config.dec_layers; ++l) {
    const std::string base = "dec.l" + std::to_string(l);
    detail::add_layer_norm(p, base + ".ln1", d);
    detail::add_attention(p, base + ".self_attn", d, seed);
    detail::add_layer_norm(p, base + ".ln2", d);
    detail::add_attention(p, base + ".cross_attn", d, seed);
    detail::add_layer_norm(p, base + ".ln3", d);
    detail::add_ff(p, base + ".ff", d, config.d_ff, seed);
  }
  detail::add_layer_norm(p, "dec.ln_out", d);
  for (const auto& v : vocabs) add_language_heads(p, v, seed);
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

struct EncoderStates {
  Tensor h;                  // T' x d_model
  std::size_t src_frames = 0;
};

namespace detail {

inline Tensor linear(const ModelParams& p, const std::string& name, const Tensor& x) {
  return add(matmul(x, p.at(name + ".w")), expand_rows(p.at(name + ".b"), x.dim(0)));
}
inline Tensor lnorm(const ModelParams& p, const std::string& name, const Tensor& x) {
  return layer_norm(x, p.at(name + ".g"), p.at(name + ".b"));
}

inline Tensor sinusoidal_pe(std::size_t len, std::size_t d) {
  std::vector<double> v(len * d);
  for (std::size_t pos = 0; pos < len; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(d));
      v[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor::from_data({len, d}, std::move(v));
}

// optional additive mask (0 / -inf), shape Tq x Tk
inline Tensor multi_head_attention(const ModelParams& p, const std::string& name,
                                   const Tensor& q_in, const Tensor& kv_in, const Tensor* mask,
                                   RunContext& ctx) {
  const std::size_t d = p.config.d_model, H = p.config.heads, dh = d / H;
  Tensor Q = linear(p, name + ".wq", q_in);
  Tensor K = linear(p, name + ".wk", kv_in);
  Tensor V = linear(p, name + ".wv", kv_in);
  std::vector<Tensor> heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < H; ++h) {
    Tensor qh = slice_cols(Q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(K, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(V, h * dh, (h + 1) * dh);
    Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
    if (mask) scores = add(scores, *mask);
    Tensor att = softmax(scores);
    att = dropout(att, p.config.dropout_att, ctx.next_seed(), ctx.training);
    heads.push_back(matmul(att, vh));
  }
  return linear(p, name + ".wo", concat_cols(heads));
}

inline Tensor feed_forward(const ModelParams& p, const std::string& name, const Tensor& x,
                           RunContext& ctx) {
  Tensor h = relu(linear(p, name + ".l1", x));
  h = dropout(h, p.config.dropout_ff, ctx.next_seed(), ctx.training);
  return linear(p, name + ".l2", h);
}

inline Tensor causal_mask(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) v[i * n + j] = kNegInf;
  return Tensor::from_data({n, n}, std::move(v));
}

}  // namespace detail

// Conv2d subsampling stack + transformer encoder.
inline EncoderStates encode(const ModelParams& p, const Tensor& features, RunContext& ctx) {
  const ModelConfig& cfg = p.config;
  if (features.rank() != 2 || features.dim(1) != cfg.input_dim)
    throw DimensionError("encode: features " + shape_str(features.shape()) + ", expected T x " +
                         std::to_string(cfg.input_dim));
  const std::size_t T = features.dim(0);
  cfg.subsampled_len(T);  // throws LengthError when too short

  Tensor x = features;  // layout: C x T x D flattened, C=1 initially
  std::size_t ch = 1, t_len = T, f_len = cfg.input_dim;
  for (std::size_t b = 0; b < cfg.conv_blocks; ++b) {
    const std::size_t t_out = (t_len - 3) / 2 + 1;
    const std::size_t f_out = conv_out_dim(f_len);
    // im2col: rows are (t,f) output positions, cols are (c, kt, kf) taps.
    std::vector<std::int64_t> idx(t_out * f_out * ch * 9);
    std::size_t w = 0;
    for (std::size_t t = 0; t < t_out; ++t)
      for (std::size_t f = 0; f < f_out; ++f)
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t kt = 0; kt < 3; ++kt)
            for (std::size_t kf = 0; kf < 3; ++kf) {
              const std::size_t ti = t * 2 + kt;
              const std::int64_t fi = static_cast<std::int64_t>(f * 2 + kf) - 1;  // feature pad 1
              idx[w++] = (fi < 0 || fi >= static_cast<std::int64_t>(f_len))
                             ? -1
                             : static_cast<std::int64_t>((c * t_len + ti) * f_len) + fi;
            }
    Tensor col = gather_flat(x, idx, {t_out * f_out, ch * 9});
    const std::string name = "enc.conv" + std::to_string(b);
    Tensor out = relu(add(matmul(col, p.at(name + ".w")),
                          expand_rows(p.at(name + ".b"), t_out * f_out)));
    x = reshape(transpose(out), {cfg.conv_channels * t_out * f_out});  // C x T x D layout
    ch = cfg.conv_channels;
    t_len = t_out;
    f_len = f_out;
  }
  // to frames x (D' * C): row t holds all (f, c) taps of that frame
  {
    std::vector<std::int64_t> idx(t_len * f_len * ch);
    std::size_t w = 0;
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t f = 0; f < f_len; ++f)
        for (std::size_t c = 0; c < ch; ++c)
          idx[w++] = static_cast<std::int64_t>((c * t_len + t) * f_len + f);
    x = gather_flat(x, idx, {t_len, f_len * ch});
  }
  Tensor h = detail::linear(p, "enc.in_proj", x);
  h = add(mul_scalar(h, std::sqrt(static_cast<double>(cfg.d_model))),
          detail::sinusoidal_pe(t_len, cfg.d_model));
  h = dropout(h, cfg.dropout_ff, ctx.next_seed(), ctx.training);
  for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
    const std::string base = "enc.l" + std::to_string(l);
    Tensor n1 = detail::lnorm(p, base + ".ln1", h);
    Tensor a = detail::multi_head_attention(p, base + ".attn", n1, n1, nullptr, ctx);
    h = add(h, dropout(a, cfg.dropout_ff, ctx.next_seed(), ctx.training));
    Tensor f = detail::feed_forward(p, base + ".ff", detail::lnorm(p, base + ".ln2", h), ctx);
    h = add(h, dropout(f, cfg.dropout_ff, ctx.next_seed(), ctx.training));
  }
  return EncoderStates{detail::lnorm(p, "enc.ln_out", h), T};
}

// Per-language CTC head: T' x |V_lang| log-probabilities.
inline Tensor ctc_logits(const ModelParams& p, const EncoderStates& states,
                         const std::string& lang) {
  p.vocab(lang);  // lookup error on unknown language
  return log_softmax(detail::linear(p, "head." + lang + ".ctc", states.h));
}

// Teacher-forced decoder pass: input token ids (sos-initiated) -> one
// log-probability row per input position, row i predicting position i+1.
inline Tensor decoder_forward(const ModelParams& p, const EncoderStates& states,
                              const std::vector<int>& input_ids, const std::string& lang,
                              RunContext& ctx) {
  const data::Vocabulary& vocab = p.vocab(lang);
  if (input_ids.empty() || input_ids[0] != data::kSos)
    throw ContractError("decoder input must start with <sos>");
  for (int id : input_ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size())
      throw ContractError("decoder input id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(vocab.size()));
  const ModelConfig& cfg = p.config;
  const std::size_t L = input_ids.size();
  Tensor x = embedding_lookup(p.at("head." + lang + ".emb"), input_ids);
  x = add(mul_scalar(x, std::sqrt(static_cast<double>(cfg.d_model))),
          detail::sinusoidal_pe(L, cfg.d_model));
  x = dropout(x, cfg.dropout_ff, ctx.next_seed(), ctx.training);
  Tensor mask = detail::causal_mask(L);
  for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
    const std::string base = "dec.l" + std::to_string(l);
    Tensor n1 = detail::lnorm(p, base + ".ln1", x);
    Tensor a = detail::multi_head_attention(p, base + ".self_attn", n1, n1, &mask, ctx);
    x = add(x, dropout(a, cfg.dropout_ff, ctx.next_seed(), ctx.training));
    Tensor c = detail::multi_head_attention(p, base + ".cross_attn",
                                            detail::lnorm(p, base + ".ln2", x), states.h, nullptr,
                                            ctx);
    x = add(x, dropout(c, cfg.dropout_ff, ctx.next_seed(), ctx.training));
    Tensor f = detail::feed_forward(p, base + ".ff", detail::lnorm(p, base + ".ln3", x), ctx);
    x = add(x, dropout(f, cfg.dropout_ff, ctx.next_seed(), ctx.training));
  }
  x = detail::lnorm(p, "dec.ln_out", x);
  return log_softmax(detail::linear(p, "head." + lang + ".out", x));
}

// Next-token log-probabilities given a sos-initiated prefix.
inline Tensor decode_step(const ModelParams& p, const EncoderStates& states,
                          const std::vector<int>& prefix, const std::string& lang,
                          RunContext& ctx) {
  Tensor rows = decoder_forward(p, states, prefix, lang, ctx);
  return row(rows, rows.dim(0) - 1);
}

}  // namespace jcast::model
