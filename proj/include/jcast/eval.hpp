// eval.hpp -- WER/CER, corpus BLEU-4 (13a tokenization, exponential
// smoothing, mixed case) and chrF2. Every report carries its signature
// string and the sufficient statistics it was computed from.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "jcast/common.hpp"
#include "jcast/data.hpp"

namespace jcast::eval {

// ---------------------------------------------------------------------------
// edit distance / WER / CER
// ---------------------------------------------------------------------------

template <typename Seq>
std::size_t edit_distance(const Seq& ref, const Seq& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// character stream with whitespace runs collapsed to a single space (the
// space itself counts as a character); leading/trailing whitespace dropped
inline std::vector<std::string> char_units(const std::string& s) {
  std::vector<std::string> words = split_words(s);
  std::vector<std::string> out;
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (w) out.push_back(" ");
    for (auto& ch : data::utf8_chars(words[w])) out.push_back(ch);
  }
  return out;
}

enum class ErrorUnit { word, character };

struct WerReport {
  double value = 0.0;  // percentage; may exceed 100
  std::size_t errors = 0, ref_units = 0;
  std::string signature;
  double recompute() const { return 100.0 * static_cast<double>(errors) / static_cast<double>(ref_units); }
};

inline WerReport wer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps,
                     ErrorUnit unit = ErrorUnit::word) {
  if (refs.size() != hyps.size())
    throw DataError("wer: " + std::to_string(refs.size()) + " refs vs " +
                    std::to_string(hyps.size()) + " hyps");
  WerReport rep;
  rep.signature = unit == ErrorUnit::word ? "metric:wer|unit:word" : "metric:cer|unit:char|ws:collapse";
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto r = unit == ErrorUnit::word ? split_words(refs[i]) : char_units(refs[i]);
    const auto h = unit == ErrorUnit::word ? split_words(hyps[i]) : char_units(hyps[i]);
    rep.errors += edit_distance(r, h);
    rep.ref_units += r.size();
  }
  if (rep.ref_units == 0) throw DataError("wer: empty reference corpus");
  rep.value = rep.recompute();
  return rep;
}

inline WerReport cer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  return wer(refs, hyps, ErrorUnit::character);
}

// ---------------------------------------------------------------------------
// 13a tokenization (mteval-v13a compatible, byte-level over UTF-8)
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

// the mteval punctuation class: { - ~, [ - `, space - &, ( - +, : - @, /
inline bool is_13a_punct(char c) {
  const unsigned char u = static_cast<unsigned char>(c);
  return (u >= '{' && u <= '~') || (u >= '[' && u <= '`') || (u >= ' ' && u <= '&') ||
         (u >= '(' && u <= '+') || (u >= ':' && u <= '@') || u == '/';
}

inline void replace_all_str(std::string& s, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

}  // namespace detail

inline std::vector<std::string> tokenize_13a(const std::string& line_in) {
  std::string line = line_in;
  detail::replace_all_str(line, "<skipped>", "");
  detail::replace_all_str(line, "-\n", "");
  detail::replace_all_str(line, "\n", " ");
  if (line.find('&') != std::string::npos) {
    detail::replace_all_str(line, "&quot;", "\"");
    detail::replace_all_str(line, "&amp;", "&");
    detail::replace_all_str(line, "&lt;", "<");
    detail::replace_all_str(line, "&gt;", ">");
  }
  line = " " + line + " ";
  // pass 1: pad general punctuation
  std::string s1;
  for (char c : line) {
    if (detail::is_13a_punct(c) && c != ' ' && c != '.' && c != ',' && c != '-') {
      s1 += ' ';
      s1 += c;
      s1 += ' ';
    } else {
      s1 += c;
    }
  }
  // pass 2: period/comma not adjacent to digits; dash after digit
  std::string s2;
  for (std::size_t i = 0; i < s1.size(); ++i) {
    const char c = s1[i];
    if ((c == '.' || c == ',')) {
      const bool digit_before = i > 0 && detail::is_digit(s1[i - 1]);
      const bool digit_after = i + 1 < s1.size() && detail::is_digit(s1[i + 1]);
      if (!digit_before || !digit_after) {
        s2 += ' ';
        s2 += c;
        s2 += ' ';
        continue;
      }
    } else if (c == '-' && i > 0 && detail::is_digit(s1[i - 1])) {
      s2 += ' ';
      s2 += c;
      s2 += ' ';
      continue;
    }
    s2 += c;
  }
  return split_words(s2);
}

// ---------------------------------------------------------------------------
// BLEU-4
// ---------------------------------------------------------------------------

struct BleuReport {
  double score = 0.0;
  double precisions[4] = {0, 0, 0, 0};  // percentages
  double brevity_penalty = 1.0;
  std::size_t sys_len = 0, ref_len = 0;
  std::size_t correct[4] = {0, 0, 0, 0};
  std::size_t total[4] = {0, 0, 0, 0};
  std::string signature = "nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp|impl:jcast";

  double recompute() const {
    double smooth = 1.0;
    double log_sum = 0.0;
    for (int n = 0; n < 4; ++n) {
      double p;
      if (total[n] == 0) return 0.0;
      if (correct[n] == 0) {
        smooth *= 2.0;
        p = 100.0 / (smooth * static_cast<double>(total[n]));
      } else {
        p = 100.0 * static_cast<double>(correct[n]) / static_cast<double>(total[n]);
      }
      log_sum += std::log(p);
    }
    const double bp = sys_len < ref_len && sys_len > 0
                          ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(sys_len))
                          : (sys_len == 0 ? 0.0 : 1.0);
    return bp * std::exp(log_sum / 4.0);
  }
};

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return counts;
}

}  // namespace detail

inline BleuReport bleu(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  if (refs.size() != hyps.size())
    throw DataError("bleu: " + std::to_string(refs.size()) + " refs vs " +
                    std::to_string(hyps.size()) + " hyps");
  if (refs.empty()) throw DataError("bleu: empty corpus");
  BleuReport rep;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto r = tokenize_13a(refs[i]);
    const auto h = tokenize_13a(hyps[i]);
    rep.ref_len += r.size();
    rep.sys_len += h.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto rc = detail::ngram_counts(r, n);
      const auto hc = detail::ngram_counts(h, n);
      for (const auto& [ng, cnt] : hc) {
        rep.total[n - 1] += cnt;
        auto it = rc.find(ng);
        if (it != rc.end()) rep.correct[n - 1] += std::min(cnt, it->second);
      }
    }
  }
  // precisions for the report (unsmoothed view)
  for (int n = 0; n < 4; ++n)
    rep.precisions[n] = rep.total[n] == 0 ? 0.0
                                          : 100.0 * static_cast<double>(rep.correct[n]) /
                                                static_cast<double>(rep.total[n]);
  rep.brevity_penalty =
      rep.sys_len < rep.ref_len && rep.sys_len > 0
          ? std::exp(1.0 - static_cast<double>(rep.ref_len) / static_cast<double>(rep.sys_len))
          : (rep.sys_len == 0 ? 0.0 : 1.0);
  rep.score = rep.recompute();
  return rep;
}

// ---------------------------------------------------------------------------
// chrF2: character n-grams 1..6, no word n-grams, whitespace excluded,
// F-score with recall weighted beta=2, effective ordering.
// ---------------------------------------------------------------------------

struct ChrfReport {
  double score = 0.0;
  std::size_t order = 6;
  double beta = 2.0;
  // per order: hypothesis n-grams, reference n-grams, matches
  std::vector<std::size_t> hyp_count, ref_count, match_count;
  std::string signature = "nrefs:1|case:mixed|eff:yes|nc:6|nw:0|space:no|impl:jcast";

  double recompute() const {
    const double factor = beta * beta;
    const double eps = 1e-16;
    double total = 0.0;
    std::size_t effective = 0;  // orders with n-grams on both sides
    for (std::size_t n = 0; n < order; ++n) {
      const double prec = hyp_count[n] > 0
                              ? static_cast<double>(match_count[n]) / static_cast<double>(hyp_count[n])
                              : eps;
      const double rec = ref_count[n] > 0
                             ? static_cast<double>(match_count[n]) / static_cast<double>(ref_count[n])
                             : eps;
      const double denom = factor * prec + rec;
      total += denom > 0.0 ? (1.0 + factor) * prec * rec / denom : eps;
      if (hyp_count[n] > 0 && ref_count[n] > 0) ++effective;
    }
    return effective == 0 ? 0.0 : 100.0 * total / static_cast<double>(effective);
  }
};

namespace detail {

inline std::map<std::string, std::size_t> char_ngrams(const std::vector<std::string>& chars,
                                                      std::size_t n) {
  std::map<std::string, std::size_t> counts;
  if (chars.size() < n) return counts;
  for (std::size_t i = 0; i + n <= chars.size(); ++i) {
    std::string ng;
    for (std::size_t k = 0; k < n; ++k) ng += chars[i + k];
    ++counts[ng];
  }
  return counts;
}

inline std::vector<std::string> chrf_chars(const std::string& s) {
  std::string compact;
  for (auto& w : split_words(s)) compact += w;  // whitespace removed entirely
  return data::utf8_chars(compact);
}

}  // namespace detail

inline ChrfReport chrf2(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  if (refs.size() != hyps.size())
    throw DataError("chrf2: " + std::to_string(refs.size()) + " refs vs " +
                    std::to_string(hyps.size()) + " hyps");
  if (refs.empty()) throw DataError("chrf2: empty corpus");
  ChrfReport rep;
  rep.hyp_count.assign(rep.order, 0);
  rep.ref_count.assign(rep.order, 0);
  rep.match_count.assign(rep.order, 0);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto rc_chars = detail::chrf_chars(refs[i]);
    const auto hc_chars = detail::chrf_chars(hyps[i]);
    for (std::size_t n = 1; n <= rep.order; ++n) {
      const auto rc = detail::char_ngrams(rc_chars, n);
      const auto hc = detail::char_ngrams(hc_chars, n);
      for (const auto& [ng, cnt] : hc) {
        rep.hyp_count[n - 1] += cnt;
        auto it = rc.find(ng);
        if (it != rc.end()) rep.match_count[n - 1] += std::min(cnt, it->second);
      }
      for (const auto& [ng, cnt] : rc) rep.ref_count[n - 1] += cnt;
    }
  }
  rep.score = rep.recompute();
  return rep;
}

}  // namespace jcast::eval
