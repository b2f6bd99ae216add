// Shared test utilities: finite differences, brute-force CTC enumeration,
// and tiny random model factories.
#pragma once

#include <functional>
#include <vector>

#include "jcast/common.hpp"
#include "jcast/ctc.hpp"
#include "jcast/data.hpp"
#include "jcast/model.hpp"
#include "jcast/tensor.hpp"

namespace jcast::test {

// |a - b| / max(|a|, |b|, 1): relative error with an absolute floor of 1
// in the denominator so near-zero gradients are compared absolutely.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

// central finite difference of f with respect to entry i of a leaf tensor
inline double finite_diff(const Tensor& leaf, std::size_t i,
                          const std::function<double()>& f, double eps = 1e-5) {
  auto& data = const_cast<std::vector<double>&>(leaf.data());
  const double orig = data[i];
  data[i] = orig + eps;
  const double up = f();
  data[i] = orig - eps;
  const double down = f();
  data[i] = orig;
  return (up - down) / (2.0 * eps);
}

// log P(target) by enumerating every length-T path over V symbols and
// collapsing (remove repeats, drop blanks). Exponential; keep T and V tiny.
inline double brute_force_ctc_logp(const std::vector<double>& log_probs, std::size_t T,
                                   std::size_t V, const std::vector<int>& target) {
  double total = kNegInf;
  std::vector<int> path(T, 0);
  while (true) {
    std::vector<int> collapsed;
    int prev = -1;
    for (int p : path) {
      if (p != ctc::kBlank && p != prev) collapsed.push_back(p);
      prev = p;
    }
    if (collapsed == target) {
      double lp = 0.0;
      for (std::size_t t = 0; t < T; ++t) lp += log_probs[t * V + path[t]];
      total = log_add(total, lp);
    }
    std::size_t pos = 0;
    while (pos < T && path[pos] == static_cast<int>(V) - 1) path[pos++] = 0;
    if (pos == T) break;
    ++path[pos];
  }
  return total;
}

// random row-normalized T x V log-probability matrix
inline Tensor random_log_probs(std::size_t T, std::size_t V, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> logits(T * V);
  for (auto& x : logits) x = rng.normal(0.0, 1.5);
  Tensor raw = Tensor::from_data({T, V}, std::move(logits));
  return log_softmax(raw).detach();
}

// word vocabulary with `extra` regular tokens a000..; reserved slots first
inline data::Vocabulary tiny_vocab(const std::string& lang, std::size_t extra) {
  std::vector<std::string> toks = data::reserved_tokens();
  char buf[16];
  for (std::size_t i = 0; i < extra; ++i) {
    std::snprintf(buf, sizeof buf, "a%03zu", i);
    toks.push_back(buf);
  }
  return data::Vocabulary(lang, std::move(toks), data::Vocabulary::Kind::word);
}

// smallest config that exercises every code path
inline model::ModelConfig tiny_config(std::size_t input_dim = 4) {
  model::ModelConfig c;
  c.d_model = 8;
  c.d_ff = 16;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.conv_channels = 4;
  c.conv_blocks = 1;
  c.dropout_ff = 0.0;
  c.dropout_att = 0.0;
  c.input_dim = input_dim;
  return c;
}

inline Tensor random_features(std::size_t T, std::size_t D, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(T * D);
  for (auto& x : v) x = rng.normal();
  return Tensor::from_data({T, D}, std::move(v));
}

}  // namespace jcast::test
