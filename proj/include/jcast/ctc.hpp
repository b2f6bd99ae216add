// ctc.hpp -- CTC negative log-likelihood (log-space forward DP over the
// blank-augmented target, built from autodiff ops so the gradient comes for
// free) and the label-synchronous prefix scorer used in joint decoding.
//
// Blank is token id 0 everywhere.
#pragma once

#include <vector>

#include "jcast/common.hpp"
#include "jcast/tensor.hpp"

namespace jcast::ctc {

constexpr int kBlank = 0;

struct AlignmentInfeasible : DataError {
  using DataError::DataError;
};

// minimum number of frames needed to emit `target` (repeats need a blank gap)
inline std::size_t min_frames(const std::vector<int>& target) {
  std::size_t need = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++need;
  return need;
}

inline void validate_target(const std::vector<int>& target, std::size_t vocab) {
  for (int t : target)
    if (t <= kBlank || static_cast<std::size_t>(t) >= vocab)
      throw ContractError("ctc target id " + std::to_string(t) + " outside [1," +
                          std::to_string(vocab) + ")");
}

// CTC loss: -log P(target | log_probs), log_probs is T x V, rows normalized.
// Differentiable with respect to log_probs through the graph.
inline Tensor ctc_loss(const Tensor& log_probs, const std::vector<int>& target) {
  if (log_probs.rank() != 2) throw DimensionError("ctc_loss: log_probs must be T x V");
  const std::size_t T = log_probs.dim(0), V = log_probs.dim(1);
  validate_target(target, V);
  const std::size_t L = target.size();
  if (T < min_frames(target))
    throw AlignmentInfeasible("ctc_loss: " + std::to_string(T) + " frames cannot align target of " +
                              std::to_string(L) + " tokens (need " +
                              std::to_string(min_frames(target)) + ")");

  // augmented label sequence: blank t1 blank t2 ... blank
  const std::size_t S = 2 * L + 1;
  std::vector<int> aug(S, kBlank);
  for (std::size_t i = 0; i < L; ++i) aug[2 * i + 1] = target[i];

  // per-frame emission vector over augmented labels, via gather
  auto emit = [&](std::size_t t) {
    std::vector<std::int64_t> idx(S);
    for (std::size_t s = 0; s < S; ++s) idx[s] = static_cast<std::int64_t>(t * V + aug[s]);
    return gather_flat(log_probs, idx, {S});
  };

  // skip transition s-2 -> s allowed when aug[s] is a new non-blank label
  std::vector<std::int64_t> shift1(S), shift2(S);
  for (std::size_t s = 0; s < S; ++s) {
    shift1[s] = s >= 1 ? static_cast<std::int64_t>(s - 1) : -1;
    const bool skip_ok = s >= 2 && aug[s] != kBlank && aug[s] != aug[s - 2];
    shift2[s] = skip_ok ? static_cast<std::int64_t>(s - 2) : -1;
  }

  // alpha_0: only states 0 (blank) and 1 (first label) reachable
  std::vector<std::int64_t> init_idx(S, -1);
  init_idx[0] = static_cast<std::int64_t>(0 * V + aug[0]);
  if (S > 1) init_idx[1] = static_cast<std::int64_t>(0 * V + aug[1]);
  Tensor alpha = gather_flat(log_probs, init_idx, {S}, kNegInf);

  for (std::size_t t = 1; t < T; ++t) {
    Tensor stay = alpha;
    Tensor from1 = gather_flat(alpha, shift1, {S}, kNegInf);
    Tensor from2 = gather_flat(alpha, shift2, {S}, kNegInf);
    alpha = add(logaddexp(logaddexp(stay, from1), from2), emit(t));
  }

  // total = alpha[S-1] (+) alpha[S-2]
  std::vector<std::int64_t> last1(1, static_cast<std::int64_t>(S - 1));
  std::vector<std::int64_t> last2(1, S >= 2 ? static_cast<std::int64_t>(S - 2) : -1);
  Tensor total = logaddexp(gather_flat(alpha, last1, {1}, kNegInf),
                           gather_flat(alpha, last2, {1}, kNegInf));
  Tensor loss = neg(reshape(total, {}));
  if (loss.item() == std::numeric_limits<double>::infinity())
    throw NumericError("ctc_loss: zero-probability target");
  return loss;
}

// Test utility: forward-backward totals per frame. For a correct lattice,
// logsumexp_s(alpha_t[s] + beta_t[s]) is the same for every t.
inline std::vector<double> alpha_beta_totals(const std::vector<double>& log_probs, std::size_t T,
                                             std::size_t V, const std::vector<int>& target) {
  const std::size_t L = target.size();
  const std::size_t S = 2 * L + 1;
  std::vector<int> aug(S, kBlank);
  for (std::size_t i = 0; i < L; ++i) aug[2 * i + 1] = target[i];
  auto lp = [&](std::size_t t, int v) { return log_probs[t * V + v]; };
  auto skip_ok = [&](std::size_t s) {
    return s >= 2 && aug[s] != kBlank && aug[s] != aug[s - 2];
  };

  std::vector<std::vector<double>> alpha(T, std::vector<double>(S, kNegInf));
  alpha[0][0] = lp(0, aug[0]);
  if (S > 1) alpha[0][1] = lp(0, aug[1]);
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[t - 1][s];
      if (s >= 1) a = log_add(a, alpha[t - 1][s - 1]);
      if (skip_ok(s)) a = log_add(a, alpha[t - 1][s - 2]);
      alpha[t][s] = a + lp(t, aug[s]);
    }

  std::vector<std::vector<double>> beta(T, std::vector<double>(S, kNegInf));
  beta[T - 1][S - 1] = 0.0;
  if (S >= 2) beta[T - 1][S - 2] = 0.0;
  for (std::size_t ti = T - 1; ti-- > 0;)
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta[ti + 1][s] + lp(ti + 1, aug[s]);
      if (s + 1 < S) b = log_add(b, beta[ti + 1][s + 1] + lp(ti + 1, aug[s + 1]));
      if (s + 2 < S && skip_ok(s + 2)) b = log_add(b, beta[ti + 1][s + 2] + lp(ti + 1, aug[s + 2]));
      beta[ti][s] = b;
    }

  std::vector<double> totals(T, kNegInf);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) totals[t] = log_add(totals[t], alpha[t][s] + beta[t][s]);
  return totals;
}

// ---------------------------------------------------------------------------
// Label-synchronous CTC prefix scorer (plain doubles, no autodiff).
//
// For a prefix g of non-blank tokens, keeps per-frame log-probabilities of
// all alignments whose collapsed output equals g, split by whether the
// alignment currently ends in a non-blank (r_nb) or blank (r_b) frame.
// score(g) = log P(collapsed output has g as a prefix); extending with eos
// yields log P(collapsed output == g) == -ctc_loss(g).
// ---------------------------------------------------------------------------

struct PrefixState {
  std::vector<double> r_nb, r_b;  // length T
  int last_token = -1;            // -1 for the empty prefix
  std::size_t length = 0;         // |g|
  double score = 0.0;             // cumulative prefix log-probability psi(g)
  bool finished = false;          // eos consumed
};

class PrefixScorer {
 public:
  // log_probs: T x V row-major, rows log-normalized, blank at index 0
  PrefixScorer(std::vector<double> log_probs, std::size_t T, std::size_t V)
      : lp_(std::move(log_probs)), T_(T), V_(V) {
    if (lp_.size() != T_ * V_) throw DimensionError("PrefixScorer: T*V mismatch");
    if (T_ == 0) throw ContractError("PrefixScorer: empty input");
  }

  std::size_t vocab() const { return V_; }
  std::size_t frames() const { return T_; }

  PrefixState init() const {
    PrefixState s;
    s.r_nb.assign(T_, kNegInf);
    s.r_b.resize(T_);
    double acc = 0.0;
    for (std::size_t t = 0; t < T_; ++t) {
      acc += lp(t, kBlank);
      s.r_b[t] = acc;
    }
    s.score = 0.0;  // every complete sequence has the empty prefix
    return s;
  }

  // Extend prefix g (state) with non-blank token c. Returns the new state;
  // new_state.score is the cumulative prefix score psi(g.c).
  PrefixState extend(const PrefixState& st, int c) const {
    if (st.finished) throw ContractError("PrefixScorer: extend after eos");
    if (c <= kBlank || static_cast<std::size_t>(c) >= V_)
      throw ContractError("PrefixScorer: token " + std::to_string(c) + " outside [1,V)");
    PrefixState out;
    out.r_nb.assign(T_, kNegInf);
    out.r_b.assign(T_, kNegInf);
    out.last_token = c;
    out.length = st.length + 1;

    // phi[t]: prob of alignments ending at frame t that can be followed by a
    // fresh emission of c (same-token repeats must cross a blank)
    std::vector<double> phi(T_);
    for (std::size_t t = 0; t < T_; ++t)
      phi[t] = (c == st.last_token) ? st.r_b[t] : log_add(st.r_b[t], st.r_nb[t]);

    double psi;
    std::size_t start;
    if (st.length == 0) {
      out.r_nb[0] = lp(0, c);
      out.r_b[0] = kNegInf;
      psi = out.r_nb[0];
      start = 1;
    } else {
      psi = kNegInf;
      start = st.length;  // need at least |g| frames before c can start
      if (start >= T_) {
        PrefixState dead = out;
        dead.score = kNegInf;
        return dead;
      }
    }
    for (std::size_t t = start; t < T_; ++t) {
      const double prev_nb = t > 0 ? out.r_nb[t - 1] : kNegInf;
      const double prev_b = t > 0 ? out.r_b[t - 1] : kNegInf;
      const double ph = t > 0 ? phi[t - 1] : kNegInf;
      out.r_nb[t] = log_add(prev_nb, ph) + lp(t, c);
      out.r_b[t] = log_add(prev_b, prev_nb) + lp(t, kBlank);
      psi = log_add(psi, ph + lp(t, c));
    }
    out.score = psi;
    return out;
  }

  // log P(collapsed output == g); querying eos on state g
  double eos_score(const PrefixState& st) const {
    return log_add(st.r_nb[T_ - 1], st.r_b[T_ - 1]);
  }

  PrefixState finish(const PrefixState& st) const {
    PrefixState out = st;
    out.score = eos_score(st);
    out.finished = true;
    return out;
  }

 private:
  double lp(std::size_t t, int v) const { return lp_[t * V_ + v]; }
  std::vector<double> lp_;
  std::size_t T_, V_;
};

}  // namespace jcast::ctc
