// decode.hpp -- joint CTC/attention beam search scoring hypotheses by
// beta * log p_ctc + (1 - beta) * log p_att, plus exhaustive and greedy
// reference decoders used as oracles and diagnostics.
#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "jcast/common.hpp"
#include "jcast/ctc.hpp"
#include "jcast/data.hpp"
#include "jcast/model.hpp"

namespace jcast::decode {

struct DecodeConfig {
  std::size_t beam = 10;
  double ctc_weight = 0.3;  // beta
  double max_len_factor = 1.5;
  std::size_t max_len_offset = 10;  // max output length = factor * T' + offset
  std::string lang_tgt;
  std::size_t prepruning_width = 0;  // attention candidates per hypothesis; 0 = full vocabulary

  void validate() const {
    if (beam < 1) throw ConfigError("beam must be >= 1");
    if (ctc_weight < 0.0 || ctc_weight > 1.0) throw ConfigError("beta must be in [0,1]");
    if (lang_tgt.empty()) throw ConfigError("decode language not set");
  }
  std::size_t max_len(std::size_t enc_frames) const {
    return static_cast<std::size_t>(max_len_factor * static_cast<double>(enc_frames)) +
           max_len_offset;
  }
};

struct DecodedHypothesis {
  std::vector<int> tokens;  // without sos/eos
  double att_logp = 0.0;
  double ctc_logp = 0.0;
  double combined = 0.0;
  bool complete = false;  // eos-terminated (vs max-length-truncated)
};

namespace detail {

// candidate output tokens: everything except blank and sos
inline std::vector<int> candidate_tokens(std::size_t vocab) {
  std::vector<int> out;
  for (int v = 1; v < static_cast<int>(vocab); ++v)
    if (v != data::kSos && v != data::kEos) out.push_back(v);
  return out;
}

// zero-weight terms are skipped so a -inf score on the unweighted side
// cannot poison the sum with NaN
inline double combine(double beta, double ctc_logp, double att_logp) {
  double s = 0.0;
  if (beta != 0.0) s += beta * ctc_logp;
  if (beta != 1.0) s += (1.0 - beta) * att_logp;
  return s;
}

inline bool lex_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

struct Hyp {
  std::vector<int> prefix;  // sos-initiated
  double att_logp = 0.0;
  ctc::PrefixState ctc_state;
  double combined = 0.0;
};

inline std::vector<int> strip_sos(const std::vector<int>& prefix) {
  return std::vector<int>(prefix.begin() + 1, prefix.end());
}

}  // namespace detail

inline ctc::PrefixScorer make_prefix_scorer(const model::ModelParams& params,
                                            const model::EncoderStates& states,
                                            const std::string& lang) {
  Tensor lp = model::ctc_logits(params, states, lang);
  return ctc::PrefixScorer(lp.data(), lp.dim(0), lp.dim(1));
}

// Beam search over Eq. beta*ctc + (1-beta)*att. Candidate generation takes
// the top attention tokens per hypothesis (prepruning_width, or the whole
// vocabulary when 0), rescored with the CTC prefix scorer. Ties everywhere
// break toward the lexicographically smaller token sequence. Search stops
// early when no live hypothesis can beat the best completed one (attention
// continuations are <= 0 and prefix scores bound every extension).
inline std::vector<DecodedHypothesis> joint_beam_search(const model::ModelParams& params,
                                                        const model::EncoderStates& states,
                                                        const DecodeConfig& cfg) {
  cfg.validate();
  const double beta = cfg.ctc_weight;
  const std::size_t vocab = params.vocab(cfg.lang_tgt).size();
  ctc::PrefixScorer scorer = make_prefix_scorer(params, states, cfg.lang_tgt);
  model::RunContext ctx{false, 0, 0};

  std::vector<detail::Hyp> live;
  live.push_back({{data::kSos}, 0.0, scorer.init(), 0.0});
  std::vector<DecodedHypothesis> completed;
  const std::size_t max_len = cfg.max_len(states.h.dim(0));
  const auto cand_tokens = detail::candidate_tokens(vocab);
  const std::size_t width =
      cfg.prepruning_width == 0 ? cand_tokens.size() : std::min(cfg.prepruning_width, cand_tokens.size());

  auto hyp_less = [](const detail::Hyp& a, const detail::Hyp& b) {
    if (a.combined != b.combined) return a.combined > b.combined;
    return detail::lex_less(a.prefix, b.prefix);
  };
  auto done_less = [](const DecodedHypothesis& a, const DecodedHypothesis& b) {
    if (a.combined != b.combined) return a.combined > b.combined;
    return detail::lex_less(a.tokens, b.tokens);
  };

  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<detail::Hyp> cands;
    for (const auto& h : live) {
      Tensor logp = model::decode_step(params, states, h.prefix, cfg.lang_tgt, ctx);
      // eos: hypothesis completes
      {
        DecodedHypothesis done;
        done.tokens = detail::strip_sos(h.prefix);
        done.att_logp = h.att_logp + logp.at(data::kEos);
        done.ctc_logp = scorer.eos_score(h.ctc_state);
        done.combined = detail::combine(beta, done.ctc_logp, done.att_logp);
        done.complete = true;
        completed.push_back(done);
      }
      // non-eos extensions: pre-prune on attention score, then CTC rescoring
      std::vector<int> toks = cand_tokens;
      std::stable_sort(toks.begin(), toks.end(), [&](int a, int b) {
        if (logp.at(a) != logp.at(b)) return logp.at(a) > logp.at(b);
        return a < b;
      });
      toks.resize(width);
      for (int c : toks) {
        detail::Hyp nh;
        nh.prefix = h.prefix;
        nh.prefix.push_back(c);
        nh.att_logp = h.att_logp + logp.at(c);
        nh.ctc_state = scorer.extend(h.ctc_state, c);
        nh.combined = detail::combine(beta, nh.ctc_state.score, nh.att_logp);
        if (nh.combined == kNegInf) continue;
        cands.push_back(std::move(nh));
      }
    }
    std::sort(cands.begin(), cands.end(), hyp_less);
    if (cands.size() > cfg.beam) cands.resize(cfg.beam);
    live = std::move(cands);
    std::sort(completed.begin(), completed.end(), done_less);
    if (completed.size() > cfg.beam) completed.resize(cfg.beam);
    if (!completed.empty() && !live.empty() && live.front().combined <= completed.front().combined)
      break;  // admissible bound: no live hypothesis can improve
  }
  // leftovers at the length limit still end with eos so their scores are
  // proper sequence log-probabilities
  for (const auto& h : live) {
    Tensor logp = model::decode_step(params, states, h.prefix, cfg.lang_tgt, ctx);
    DecodedHypothesis d;
    d.tokens = detail::strip_sos(h.prefix);
    d.att_logp = h.att_logp + logp.at(data::kEos);
    d.ctc_logp = scorer.eos_score(h.ctc_state);
    d.combined = detail::combine(beta, d.ctc_logp, d.att_logp);
    d.complete = true;
    completed.push_back(d);
  }
  std::stable_sort(completed.begin(), completed.end(), done_less);
  if (completed.size() > cfg.beam) completed.resize(cfg.beam);
  return completed;
}

// attention log-probability of the complete sequence (teacher-forced, eos
// included); shared by the exhaustive oracle and score recomputation tests
inline double attention_sequence_logp(const model::ModelParams& params,
                                      const model::EncoderStates& states,
                                      const std::vector<int>& tokens, const std::string& lang) {
  model::RunContext ctx{false, 0, 0};
  std::vector<int> input{data::kSos};
  input.insert(input.end(), tokens.begin(), tokens.end());
  Tensor rows = model::decoder_forward(params, states, input, lang, ctx);
  double logp = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) logp += rows.at(i, tokens[i]);
  logp += rows.at(tokens.size(), data::kEos);
  return logp;
}

// CTC log-probability of the complete sequence; -inf when unalignable
inline double ctc_sequence_logp(const model::ModelParams& params,
                                const model::EncoderStates& states, const std::vector<int>& tokens,
                                const std::string& lang) {
  Tensor lp = model::ctc_logits(params, states, lang);
  if (tokens.empty()) {
    double acc = 0.0;
    for (std::size_t t = 0; t < lp.dim(0); ++t) acc += lp.at(t, ctc::kBlank);
    return acc;
  }
  try {
    return -ctc::ctc_loss(lp.detach(), tokens).item();
  } catch (const ctc::AlignmentInfeasible&) {
    return kNegInf;
  }
}

// Exact argmax of the joint score over all token sequences of length <= max_len.
// Guarded against search spaces above 10^6 sequences. Ties break toward the
// lexicographically smaller sequence.
inline DecodedHypothesis exhaustive_decode(const model::ModelParams& params,
                                           const model::EncoderStates& states,
                                           const DecodeConfig& cfg, std::size_t max_len) {
  cfg.validate();
  const auto cand = detail::candidate_tokens(params.vocab(cfg.lang_tgt).size());
  double space = 1.0, total = 1.0;
  for (std::size_t l = 1; l <= max_len; ++l) {
    space *= static_cast<double>(cand.size());
    total += space;
    if (total > 1e6)
      throw ContractError("exhaustive_decode: search space exceeds 1e6 sequences");
  }
  const double beta = cfg.ctc_weight;
  DecodedHypothesis best;
  bool have = false;
  std::vector<int> seq;
  auto consider = [&](const std::vector<int>& z) {
    DecodedHypothesis h;
    h.tokens = z;
    h.att_logp = attention_sequence_logp(params, states, z, cfg.lang_tgt);
    h.ctc_logp = ctc_sequence_logp(params, states, z, cfg.lang_tgt);
    h.combined = detail::combine(beta, h.ctc_logp, h.att_logp);
    h.complete = true;
    if (!have || h.combined > best.combined ||
        (h.combined == best.combined && detail::lex_less(h.tokens, best.tokens))) {
      best = h;
      have = true;
    }
  };
  std::function<void(std::size_t)> rec = [&](std::size_t depth) {
    consider(seq);
    if (depth == max_len) return;
    for (int c : cand) {
      seq.push_back(c);
      rec(depth + 1);
      seq.pop_back();
    }
  };
  rec(0);
  return best;
}

// Best-path CTC decoding: per-frame argmax, collapse repeats, drop blanks.
inline std::vector<int> ctc_greedy(const model::ModelParams& params,
                                   const model::EncoderStates& states, const std::string& lang) {
  Tensor lp = model::ctc_logits(params, states, lang);
  std::vector<int> out;
  int prev = ctc::kBlank;
  for (std::size_t t = 0; t < lp.dim(0); ++t) {
    int arg = 0;
    for (int v = 1; v < static_cast<int>(lp.dim(1)); ++v)
      if (lp.at(t, v) > lp.at(t, arg)) arg = v;
    if (arg != ctc::kBlank && arg != prev) out.push_back(arg);
    prev = arg;
  }
  return out;
}

}  // namespace jcast::decode
