// train.hpp -- joint CTC+attention objectives, adam with warmup /
// inverse-sqrt schedule, transfer initialization from ASR checkpoints with
// retain/discard CTC and non-target-language freezing, and bit-exact
// checkpoint serialization.
#pragma once

#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "jcast/common.hpp"
#include "jcast/ctc.hpp"
#include "jcast/data.hpp"
#include "jcast/model.hpp"
#include "jcast/tensor.hpp"

namespace jcast::train {

enum class TaskMode { asr, st };
enum class CtcTargetSide { transcript, translation };

struct TrainConfig {
  TaskMode mode = TaskMode::asr;
  double ctc_weight = 0.3;  // lambda for ASR, alpha for ST
  CtcTargetSide ctc_target_side = CtcTargetSide::translation;
  std::size_t epochs = 20;
  std::size_t warmup_steps = 400;
  double peak_lr = 5e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  bool freeze_non_target = true;
  double grad_clip = 5.0;  // global norm; <= 0 disables
  std::string lang;        // training/target language (heads to use)
  bool skip_infeasible = true;

  void validate() const {
    if (ctc_weight < 0.0 || ctc_weight > 1.0) throw ConfigError("ctc weight must be in [0,1]");
    if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
    if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
    if (lang.empty()) throw ConfigError("training language not set");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"mode", c.mode == TaskMode::asr ? "asr" : "st"},
                     {"ctc_weight", c.ctc_weight},
                     {"ctc_target_side",
                      c.ctc_target_side == CtcTargetSide::transcript ? "transcript" : "translation"},
                     {"epochs", c.epochs},
                     {"warmup_steps", c.warmup_steps},
                     {"peak_lr", c.peak_lr},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"freeze_non_target", c.freeze_non_target},
                     {"grad_clip", c.grad_clip},
                     {"lang", c.lang},
                     {"skip_infeasible", c.skip_infeasible}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.mode = j.value("mode", "asr") == std::string("st") ? TaskMode::st : TaskMode::asr;
  c.ctc_weight = j.value("ctc_weight", d.ctc_weight);
  c.ctc_target_side = j.value("ctc_target_side", "translation") == std::string("transcript")
                          ? CtcTargetSide::transcript
                          : CtcTargetSide::translation;
  c.epochs = j.value("epochs", d.epochs);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.peak_lr = j.value("peak_lr", d.peak_lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.freeze_non_target = j.value("freeze_non_target", d.freeze_non_target);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.lang = j.value("lang", d.lang);
  c.skip_infeasible = j.value("skip_infeasible", d.skip_infeasible);
}

// ---------------------------------------------------------------------------
// objectives
// ---------------------------------------------------------------------------

// tokens for the attention branch: [sos, y..., eos] input/target views
inline std::vector<int> with_sos(const std::vector<int>& ids) {
  std::vector<int> in{data::kSos};
  in.insert(in.end(), ids.begin(), ids.end());
  return in;
}
inline std::vector<int> with_eos(const std::vector<int>& ids) {
  std::vector<int> out = ids;
  out.push_back(data::kEos);
  return out;
}

// Label-smoothed attention loss, summed over target positions.
inline Tensor attention_loss(const model::ModelParams& p, const model::EncoderStates& states,
                             const std::vector<int>& target_ids, const std::string& lang,
                             model::RunContext& ctx) {
  Tensor rows = model::decoder_forward(p, states, with_sos(target_ids), lang, ctx);
  return cross_entropy_label_smoothing(rows, with_eos(target_ids), p.config.label_smoothing);
}

struct UtteranceLoss {
  Tensor loss;
  bool skipped = false;  // CTC alignment infeasible
};

// lambda * L_ctc + (1 - lambda) * L_att on transcript targets.
inline UtteranceLoss asr_loss(const model::ModelParams& p, const data::Utterance& utt,
                              double lambda, const std::string& lang, model::RunContext& ctx) {
  if (!utt.transcript) throw DataError("asr_loss: utterance '" + utt.id + "' has no transcript");
  const std::vector<int> y = p.vocab(lang).encode(*utt.transcript);
  Tensor feats = Tensor::from_data({utt.frames, utt.dim}, utt.features);
  model::EncoderStates states = model::encode(p, feats, ctx);
  Tensor loss = Tensor::scalar(0.0);
  if (lambda > 0.0) {
    try {
      Tensor lc = ctc::ctc_loss(ctc_logits(p, states, lang), y);
      loss = lambda == 1.0 ? lc : mul_scalar(lc, lambda);
    } catch (const ctc::AlignmentInfeasible&) {
      return {Tensor(), true};
    }
  }
  if (lambda < 1.0) {
    Tensor la = attention_loss(p, states, y, lang, ctx);
    Tensor scaled = lambda == 0.0 ? la : mul_scalar(la, 1.0 - lambda);
    loss = lambda == 0.0 ? scaled : add(loss, scaled);
  }
  return {loss, false};
}

// alpha * L_ctc + (1 - alpha) * L_att; attention always on translations, CTC
// on the configured side.
inline UtteranceLoss st_loss(const model::ModelParams& p, const data::Utterance& utt, double alpha,
                             const std::string& lang_tgt, CtcTargetSide side,
                             model::RunContext& ctx) {
  if (!utt.translation) throw DataError("st_loss: utterance '" + utt.id + "' has no translation");
  const std::vector<int> z = p.vocab(lang_tgt).encode(*utt.translation);
  Tensor feats = Tensor::from_data({utt.frames, utt.dim}, utt.features);
  model::EncoderStates states = model::encode(p, feats, ctx);
  Tensor loss = Tensor::scalar(0.0);
  if (alpha > 0.0) {
    std::vector<int> ctc_target;
    std::string ctc_lang;
    if (side == CtcTargetSide::translation) {
      ctc_target = z;
      ctc_lang = lang_tgt;
    } else {
      if (!utt.transcript)
        throw DataError("st_loss: ctc_target_side=transcript but utterance '" + utt.id +
                        "' has no transcript");
      if (!utt.lang_tgt && utt.lang_src.empty())
        throw DataError("st_loss: utterance '" + utt.id + "' has no source language");
      ctc_lang = utt.lang_src;
      ctc_target = p.vocab(ctc_lang).encode(*utt.transcript);
    }
    try {
      Tensor lc = ctc::ctc_loss(ctc_logits(p, states, ctc_lang), ctc_target);
      loss = alpha == 1.0 ? lc : mul_scalar(lc, alpha);
    } catch (const ctc::AlignmentInfeasible&) {
      return {Tensor(), true};
    }
  }
  if (alpha < 1.0) {
    Tensor la = attention_loss(p, states, z, lang_tgt, ctx);
    Tensor scaled = alpha == 0.0 ? la : mul_scalar(la, 1.0 - alpha);
    loss = alpha == 0.0 ? scaled : add(loss, scaled);
  }
  return {loss, false};
}

// ---------------------------------------------------------------------------
// schedule + optimizer
// ---------------------------------------------------------------------------

// linear warmup to peak at step == warmup, then inverse-sqrt decay
inline double lr_schedule(std::size_t step, std::size_t warmup, double peak) {
  if (step == 0) throw ContractError("lr_schedule: step must be >= 1");
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

// adam, beta1=0.9, beta2=0.98, eps=1e-9, bias-corrected, no weight decay.
// Frozen parameters are skipped entirely; their moment buffers stay zero.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(model::ModelParams& params, double lr, double grad_clip) {
    ++t_;
    double norm_sq = 0.0;
    for (auto& [name, tensor] : params.tensors) {
      if (params.frozen.count(name)) continue;
      for (double g : tensor.grad()) norm_sq += g * g;
    }
    double scale = 1.0;
    if (grad_clip > 0.0) {
      const double norm = std::sqrt(norm_sq);
      if (norm > grad_clip) scale = grad_clip / norm;
    }
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, tensor] : params.tensors) {
      if (params.frozen.count(name)) continue;
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(tensor.size(), 0.0);
        v.assign(tensor.size(), 0.0);
      }
      const auto& g = tensor.grad();
      auto& data = const_cast<std::vector<double>&>(tensor.data());
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double gi = g[i] * scale;
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

  std::size_t steps() const { return t_; }
  const std::map<std::string, std::vector<double>>& m() const { return m_; }
  const std::map<std::string, std::vector<double>>& v() const { return v_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// checkpoint format: magic "JCAST001", then a JSON config record, then named
// tensors (name, dtype code, rank, dims, little-endian f-payload)
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("checkpoint: truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
  write_u32(out, static_cast<std::uint32_t>(v));
  write_u32(out, static_cast<std::uint32_t>(v >> 32));
}
inline std::uint64_t read_u64(std::istream& in) {
  const std::uint64_t lo = read_u32(in);
  const std::uint64_t hi = read_u32(in);
  return lo | (hi << 32);
}
inline void write_str(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_str(std::istream& in) {
  const std::uint32_t n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw DataError("checkpoint: truncated string");
  return s;
}

}  // namespace detail

struct Checkpoint {
  model::ModelParams params;
  std::optional<std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>>
      optimizer_state;  // name -> (m, v)
  std::uint64_t step = 0;
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write("JCAST001", 8);
  detail::write_u32(out, 1);  // format version
  nlohmann::json cfg;
  cfg["model"] = ckpt.params.config;
  cfg["languages"] = nlohmann::json::array();
  for (const auto& [lang, vocab] : ckpt.params.vocabs) cfg["languages"].push_back(vocab.to_json());
  cfg["frozen"] = std::vector<std::string>(ckpt.params.frozen.begin(), ckpt.params.frozen.end());
  detail::write_str(out, cfg.dump());
  detail::write_u64(out, ckpt.step);
  detail::write_u32(out, static_cast<std::uint32_t>(ckpt.params.tensors.size()));
  for (const auto& [name, t] : ckpt.params.tensors) {
    detail::write_str(out, name);
    detail::write_u32(out, static_cast<std::uint32_t>(t.dtype() == DType::f32 ? 0 : 1));
    detail::write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::write_u64(out, d);
    if (t.dtype() == DType::f32) {
      for (double v : t.data()) {
        float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::write_u32(out, bits);
      }
    } else {
      for (double v : t.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        detail::write_u64(out, bits);
      }
    }
  }
  detail::write_u32(out, ckpt.optimizer_state ? 1 : 0);
  if (ckpt.optimizer_state) {
    detail::write_u32(out, static_cast<std::uint32_t>(ckpt.optimizer_state->size()));
    for (const auto& [name, mv] : *ckpt.optimizer_state) {
      detail::write_str(out, name);
      detail::write_u64(out, mv.first.size());
      for (double v : mv.first) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        detail::write_u64(out, bits);
      }
      for (double v : mv.second) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        detail::write_u64(out, bits);
      }
    }
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "JCAST001")
    throw DataError("checkpoint " + path + ": bad magic");
  const std::uint32_t version = detail::read_u32(in);
  if (version != 1) throw DataError("checkpoint " + path + ": unsupported version");
  Checkpoint ckpt;
  const nlohmann::json cfg = nlohmann::json::parse(detail::read_str(in));
  ckpt.params.config = cfg.at("model").get<model::ModelConfig>();
  for (const auto& vj : cfg.at("languages")) {
    auto vocab = data::Vocabulary::from_json(vj);
    ckpt.params.vocabs.emplace(vocab.language(), std::move(vocab));
  }
  for (const auto& f : cfg.value("frozen", std::vector<std::string>{}))
    ckpt.params.frozen.insert(f);
  ckpt.step = detail::read_u64(in);
  const std::uint32_t n_tensors = detail::read_u32(in);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = detail::read_str(in);
    const std::uint32_t dtype_code = detail::read_u32(in);
    const std::uint32_t rank = detail::read_u32(in);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(detail::read_u64(in));
      n *= d;
    }
    std::vector<double> vals(n);
    if (dtype_code == 0) {
      for (auto& v : vals) {
        const std::uint32_t bits = detail::read_u32(in);
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
      }
    } else {
      for (auto& v : vals) {
        const std::uint64_t bits = detail::read_u64(in);
        double d;
        std::memcpy(&d, &bits, 8);
        v = d;
      }
    }
    ckpt.params.tensors.emplace(
        name, Tensor::from_data(std::move(shape), std::move(vals),
                                dtype_code == 0 ? DType::f32 : DType::f64));
  }
  if (detail::read_u32(in) == 1) {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> opt;
    const std::uint32_t n_opt = detail::read_u32(in);
    for (std::uint32_t i = 0; i < n_opt; ++i) {
      const std::string name = detail::read_str(in);
      const std::uint64_t n = detail::read_u64(in);
      std::vector<double> m(n), v(n);
      for (auto& x : m) {
        const std::uint64_t bits = detail::read_u64(in);
        std::memcpy(&x, &bits, 8);
      }
      for (auto& x : v) {
        const std::uint64_t bits = detail::read_u64(in);
        std::memcpy(&x, &bits, 8);
      }
      opt.emplace(name, std::make_pair(std::move(m), std::move(v)));
    }
    ckpt.optimizer_state = std::move(opt);
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// transfer initialization
// ---------------------------------------------------------------------------

// Copy encoder/decoder bodies and all language heads from an ASR model. The
// target language head must exist. With retain_ctc=false the target-language
// CTC projection is re-initialized from `reinit_seed`; with freezing on, all
// non-target language head tensors are excluded from optimizer updates.
inline model::ModelParams init_st_from_asr(const model::ModelParams& asr, bool retain_ctc,
                                           const std::string& target_lang, bool freeze_non_target,
                                           std::uint64_t reinit_seed) {
  if (!asr.has_language(target_lang)) {
    std::string langs;
    for (const auto& [l, v] : asr.vocabs) langs += (langs.empty() ? "" : ", ") + l;
    throw ConfigError("init_st_from_asr: target language '" + target_lang +
                      "' absent from checkpoint (has: " + langs + ")");
  }
  model::ModelParams st = asr.clone();
  st.frozen.clear();
  if (!retain_ctc) {
    const std::string name = "head." + target_lang + ".ctc";
    const std::size_t d = st.config.d_model, V = st.vocab(target_lang).size();
    st.tensors.at(name + ".w") = model::init::xavier({d, V}, d, V, reinit_seed, name + ".w");
    st.tensors.at(name + ".b") = Tensor::zeros({V});
  }
  if (freeze_non_target) {
    for (const auto& [lang, vocab] : st.vocabs) {
      if (lang == target_lang) continue;
      for (const char* part : {".ctc.w", ".ctc.b", ".emb", ".out.w", ".out.b"})
        st.frozen.insert("head." + lang + part);
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double lr = 0.0;
  std::size_t skipped_utterances = 0;
};

inline nlohmann::json to_json_record(const EpochMetrics& m) {
  return nlohmann::json{{"epoch", m.epoch},
                        {"train_loss", m.train_loss},
                        {"dev_loss", m.dev_loss},
                        {"lr", m.lr},
                        {"skipped_utterances", m.skipped_utterances}};
}

struct TrainResult {
  model::ModelParams best_params;   // best dev loss
  model::ModelParams final_params;  // after the last epoch
  std::vector<EpochMetrics> log;
  double best_dev_loss = 0.0;
  std::size_t best_epoch = 0;
};

inline void check_init_compatible(const model::ModelParams& params, const TrainConfig& cfg) {
  if (!params.has_language(cfg.lang)) {
    std::string msg = "initialization error: language '" + cfg.lang + "' not in model (has:";
    for (const auto& [l, v] : params.vocabs) msg += " " + l + "(" + std::to_string(v.size()) + ")";
    throw ConfigError(msg + ")");
  }
}

// Deterministic given config.seed: batches sorted by frame count, epoch-level
// seeded shuffle of batch order, single-threaded steps.
inline TrainResult train(model::ModelParams params, const TrainConfig& cfg,
                         const data::Manifest& train_set, const data::Manifest& dev_set,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  cfg.validate();
  check_init_compatible(params, cfg);
  if (train_set.empty()) throw DataError("train: empty training manifest");
  params.set_requires_grad(true);

  // ASR batches may mix languages; each utterance trains through the heads
  // of its own source language. ST always targets cfg.lang.
  auto utterance_loss = [&](const data::Utterance& u, model::RunContext& ctx) -> UtteranceLoss {
    if (cfg.mode == TaskMode::asr) {
      if (!params.has_language(u.lang_src))
        throw ConfigError("train: utterance '" + u.id + "' language '" + u.lang_src +
                          "' not registered in model");
      return asr_loss(params, u, cfg.ctc_weight, u.lang_src, ctx);
    }
    return st_loss(params, u, cfg.ctc_weight, cfg.lang, cfg.ctc_target_side, ctx);
  };

  // sort by frame count (stable: ties keep manifest order), fixed-size batches
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return train_set[a].frames < train_set[b].frames;
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += cfg.batch_size)
    batches.emplace_back(order.begin() + i,
                         order.begin() + std::min(i + cfg.batch_size, order.size()));

  Adam opt;
  TrainResult result;
  result.best_dev_loss = std::numeric_limits<double>::infinity();
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> batch_order(batches.size());
    for (std::size_t i = 0; i < batch_order.size(); ++i) batch_order[i] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, hash_str("epoch") ^ epoch));
    shuffle_rng.shuffle(batch_order);

    double epoch_loss = 0.0;
    std::size_t epoch_examples = 0, skipped = 0;
    double last_lr = 0.0;
    for (std::size_t b : batch_order) {
      ++step;
      params.zero_grad();
      std::vector<Tensor> losses;
      for (std::size_t ui : batches[b]) {
        model::RunContext ctx{true, mix_seed(cfg.seed, hash_str("dropout") ^ (step * 131071ULL + ui)), 0};
        UtteranceLoss ul = utterance_loss(train_set[ui], ctx);
        if (ul.skipped) {
          ++skipped;
          continue;
        }
        losses.push_back(reshape(ul.loss, {1}));
      }
      if (losses.empty()) continue;
      Tensor batch_loss = mean(concat_rows(losses));
      backward(batch_loss);
      last_lr = lr_schedule(step, cfg.warmup_steps, cfg.peak_lr);
      opt.step(params, last_lr, cfg.grad_clip);
      epoch_loss += batch_loss.item() * static_cast<double>(losses.size());
      epoch_examples += losses.size();
    }

    // dev evaluation (no dropout, no grads needed but graph construction is harmless)
    double dev_loss = 0.0;
    std::size_t dev_examples = 0;
    for (const auto& u : dev_set) {
      model::RunContext ctx{false, 0, 0};
      UtteranceLoss ul = utterance_loss(u, ctx);
      if (ul.skipped) continue;
      dev_loss += ul.loss.item();
      ++dev_examples;
    }
    dev_loss = dev_examples ? dev_loss / static_cast<double>(dev_examples) : 0.0;

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = epoch_examples ? epoch_loss / static_cast<double>(epoch_examples) : 0.0;
    m.dev_loss = dev_loss;
    m.lr = last_lr;
    m.skipped_utterances = skipped;
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);
    if (dev_examples == 0 || dev_loss < result.best_dev_loss) {
      result.best_dev_loss = dev_loss;
      result.best_epoch = epoch;
      result.best_params = params.clone();
    }
  }
  result.final_params = std::move(params);
  if (result.best_params.tensors.empty()) result.best_params = result.final_params.clone();
  return result;
}

}  // namespace jcast::train
