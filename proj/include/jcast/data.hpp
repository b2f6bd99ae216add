// data.hpp -- vocabularies, Viterbi subword segmentation, utterance manifests
// with raw little-endian f32 feature files, and the seeded synthetic task
// generator used by tests and experiments.
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "jcast/common.hpp"

namespace jcast::data {

// Reserved token indices, fixed across every vocabulary. Blank must be 0 for
// the CTC module.
enum Reserved : int { kBlank = 0, kUnk = 1, kSos = 2, kEos = 3 };
inline const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r = {"<blank>", "<unk>", "<sos>", "<eos>"};
  return r;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

class Vocabulary {
 public:
  enum class Kind { word, chars };  // word: tokens joined by spaces; chars: concatenated

  Vocabulary() = default;
  Vocabulary(std::string language, std::vector<std::string> tokens, Kind kind,
             std::vector<double> log_probs = {})
      : language_(std::move(language)), tokens_(std::move(tokens)), kind_(kind),
        log_probs_(std::move(log_probs)) {
    if (tokens_.size() < 5) throw DataError("vocabulary must have >= 5 tokens");
    for (int i = 0; i < 4; ++i)
      if (tokens_[i] != reserved_tokens()[i])
        throw DataError("vocabulary reserved slot " + std::to_string(i) + " holds '" + tokens_[i] +
                        "'");
    if (!log_probs_.empty() && log_probs_.size() != tokens_.size())
      throw DataError("vocabulary log-prob count mismatch");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
        throw DataError("duplicate token '" + tokens_[i] + "'");
    }
  }

  const std::string& language() const { return language_; }
  std::size_t size() const { return tokens_.size(); }
  Kind kind() const { return kind_; }
  bool has_log_probs() const { return !log_probs_.empty(); }
  double log_prob(int id) const { return log_probs_.at(id); }
  const std::string& token(int id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& tok) const { return index_.count(tok) > 0; }

  // text -> token ids (no sos/eos added). Word vocabularies split on spaces;
  // char vocabularies use Viterbi segmentation when log-probs are present,
  // else one token per codepoint.
  std::vector<int> encode(const std::string& text) const;

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const int id = ids[i];
      if (id == kSos || id == kEos || id == kBlank) continue;
      if (kind_ == Kind::word && !out.empty()) out += ' ';
      out += token(id);
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["language"] = language_;
    j["kind"] = kind_ == Kind::word ? "word" : "chars";
    j["tokens"] = tokens_;
    if (!log_probs_.empty()) j["log_probs"] = log_probs_;
    return j;
  }
  static Vocabulary from_json(const nlohmann::json& j) {
    return Vocabulary(j.at("language").get<std::string>(),
                      j.at("tokens").get<std::vector<std::string>>(),
                      j.at("kind").get<std::string>() == "word" ? Kind::word : Kind::chars,
                      j.value("log_probs", std::vector<double>{}));
  }

  // Vocab file: one token (+ optional tab-separated log-prob) per line, UTF-8.
  // Reserved tokens are written too, so the file round-trips exactly.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocab file " + path);
    char buf[64];
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      out << tokens_[i];
      if (!log_probs_.empty()) {
        std::snprintf(buf, sizeof buf, "%.17g", log_probs_[i]);
        out << '\t' << buf;
      }
      out << '\n';
    }
  }
  static Vocabulary load(const std::string& path, const std::string& language, Kind kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocab file " + path);
    std::vector<std::string> tokens;
    std::vector<double> lps;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos) {
        tokens.push_back(line);
      } else {
        tokens.push_back(line.substr(0, tab));
        lps.push_back(std::stod(line.substr(tab + 1)));
      }
    }
    if (!lps.empty() && lps.size() != tokens.size())
      throw DataError("vocab file mixes tokens with and without log-probs: " + path);
    return Vocabulary(language, std::move(tokens), kind, std::move(lps));
  }

 private:
  std::string language_;
  std::vector<std::string> tokens_;
  Kind kind_ = Kind::word;
  std::vector<double> log_probs_;
  std::map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// UTF-8 helpers and vocabulary builders
// ---------------------------------------------------------------------------

inline std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t n = 1;
    if (c >= 0xF0)
      n = 4;
    else if (c >= 0xE0)
      n = 3;
    else if (c >= 0xC0)
      n = 2;
    n = std::min(n, s.size() - i);
    out.push_back(s.substr(i, n));
    i += n;
  }
  return out;
}

// One token per distinct character, codepoint-sorted, plus reserved tokens.
inline Vocabulary build_char_vocab(const std::vector<std::string>& corpus,
                                   const std::string& language) {
  if (corpus.empty()) throw DataError("build_char_vocab: empty corpus");
  std::vector<std::string> chars;
  for (const auto& line : corpus)
    for (auto& ch : utf8_chars(line)) chars.push_back(ch);
  if (chars.empty()) throw DataError("build_char_vocab: corpus has no characters");
  std::sort(chars.begin(), chars.end());
  chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
  std::vector<std::string> tokens = reserved_tokens();
  tokens.insert(tokens.end(), chars.begin(), chars.end());
  return Vocabulary(language, std::move(tokens), Vocabulary::Kind::chars);
}

// One token per distinct whitespace-separated word, sorted.
inline Vocabulary build_word_vocab(const std::vector<std::string>& corpus,
                                   const std::string& language) {
  if (corpus.empty()) throw DataError("build_word_vocab: empty corpus");
  std::vector<std::string> words;
  for (const auto& line : corpus) {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && line[i] == ' ') ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ') ++j;
      if (j > i) words.push_back(line.substr(i, j - i));
      i = j;
    }
  }
  if (words.empty()) throw DataError("build_word_vocab: corpus has no words");
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  std::vector<std::string> tokens = reserved_tokens();
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocabulary(language, std::move(tokens), Vocabulary::Kind::word);
}

// ---------------------------------------------------------------------------
// Viterbi segmentation (unigram model; training of the model is external)
// ---------------------------------------------------------------------------

struct Segmentation {
  std::vector<int> ids;
  std::size_t unk_count = 0;
};

// Maximizes the sum of token log-probs over all segmentations of `text`.
// Ties: fewer tokens, then leftmost-longest. Characters absent from the
// vocabulary map to <unk> (log-prob of <unk>, or -20 if none) and are counted.
inline Segmentation viterbi_segment(const std::string& text, const Vocabulary& vocab) {
  Segmentation result;
  if (text.empty()) return result;
  if (!vocab.has_log_probs())
    throw ContractError("viterbi_segment: vocabulary carries no log-probs");

  const auto chars = utf8_chars(text);
  const std::size_t n = chars.size();
  // byte offsets of char boundaries
  std::vector<std::size_t> offs(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) offs[i + 1] = offs[i] + chars[i].size();

  const double unk_lp = vocab.log_prob(kUnk);
  struct Cell {
    double score = kNegInf;
    std::size_t ntokens = 0;
    std::size_t next = 0;  // char index where the chosen first token ends
    int tok = kUnk;
  };
  // DP right-to-left: best[i] = best segmentation of chars[i..n)
  std::vector<Cell> best(n + 1);
  best[n].score = 0.0;
  const std::size_t max_tok_chars = 16;  // tokens longer than this are not searched
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = i + 1; j <= std::min(n, i + max_tok_chars); ++j) {
      if (best[j].score == kNegInf) continue;
      const std::string piece = text.substr(offs[i], offs[j] - offs[i]);
      double lp;
      int tok_id;
      if (vocab.contains(piece)) {
        tok_id = vocab.id(piece);
        lp = vocab.log_prob(tok_id);
      } else if (j == i + 1) {
        tok_id = kUnk;  // single unknown character
        lp = unk_lp;
      } else {
        continue;
      }
      const double sc = lp + best[j].score;
      const std::size_t nt = 1 + best[j].ntokens;
      Cell& cur = best[i];
      const bool better = sc > cur.score || (sc == cur.score && nt < cur.ntokens) ||
                          (sc == cur.score && nt == cur.ntokens && j > cur.next);
      if (better) cur = Cell{sc, nt, j, tok_id};
    }
    if (best[i].score == kNegInf)
      throw DataError("viterbi_segment: no segmentation for suffix at char " + std::to_string(i));
  }
  for (std::size_t i = 0; i < n;) {
    result.ids.push_back(best[i].tok);
    if (best[i].tok == kUnk) ++result.unk_count;
    i = best[i].next;
  }
  return result;
}

inline std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> ids;
  if (kind_ == Kind::word) {
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && text[i] == ' ') ++i;
      std::size_t j = i;
      while (j < text.size() && text[j] != ' ') ++j;
      if (j > i) ids.push_back(id(text.substr(i, j - i)));
      i = j;
    }
  } else if (has_log_probs()) {
    ids = viterbi_segment(text, *this).ids;
  } else {
    for (auto& ch : utf8_chars(text)) ids.push_back(id(ch));
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Utterances, feature files, manifests
// ---------------------------------------------------------------------------

struct Utterance {
  std::string id;
  std::size_t frames = 0, dim = 0;
  std::vector<double> features;  // frames x dim row-major (f32 values)
  std::string lang_src;
  std::optional<std::string> lang_tgt;
  std::optional<std::string> transcript;
  std::optional<std::string> translation;
};

using Manifest = std::vector<Utterance>;

inline void write_features(const std::string& path, const std::vector<double>& feats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file " + path);
  for (double v : feats) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
}

inline std::vector<double> read_features(const std::string& path, std::size_t frames,
                                         std::size_t dim) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("missing feature file " + path);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != frames * dim * sizeof(float))
    throw DataError("feature file " + path + " has " + std::to_string(bytes) +
                    " bytes, expected " + std::to_string(frames * dim * sizeof(float)) + " (" +
                    std::to_string(frames) + "x" + std::to_string(dim) + " f32)");
  in.seekg(0);
  std::vector<double> out(frames * dim);
  for (auto& v : out) {
    float f;
    in.read(reinterpret_cast<char*>(&f), sizeof f);
    v = static_cast<double>(f);
  }
  return out;
}

// Manifest: line-delimited JSON records; feature payloads in side files.
inline void save_manifest(const Manifest& m, const std::string& manifest_path,
                          const std::string& feat_dir) {
  std::filesystem::create_directories(feat_dir);
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + manifest_path);
  for (const auto& u : m) {
    const std::string feat_path = feat_dir + "/" + u.id + ".f32";
    write_features(feat_path, u.features);
    nlohmann::json j;
    j["id"] = u.id;
    j["feat"] = feat_path;
    j["frames"] = u.frames;
    j["dim"] = u.dim;
    j["lang_src"] = u.lang_src;
    if (u.lang_tgt) j["lang_tgt"] = *u.lang_tgt;
    if (u.transcript) j["transcript"] = *u.transcript;
    if (u.translation) j["translation"] = *u.translation;
    out << j.dump() << '\n';
  }
}

inline Manifest load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + manifest_path);
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw DataError("manifest " + manifest_path + " line " + std::to_string(lineno) + ": " +
                      e.what());
    }
    Utterance u;
    u.id = j.at("id").get<std::string>();
    u.frames = j.at("frames").get<std::size_t>();
    u.dim = j.at("dim").get<std::size_t>();
    u.lang_src = j.at("lang_src").get<std::string>();
    if (j.contains("lang_tgt")) u.lang_tgt = j.at("lang_tgt").get<std::string>();
    if (j.contains("transcript")) u.transcript = j.at("transcript").get<std::string>();
    if (j.contains("translation")) u.translation = j.at("translation").get<std::string>();
    u.features = read_features(j.at("feat").get<std::string>(), u.frames, u.dim);
    m.push_back(std::move(u));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic task generator
// ---------------------------------------------------------------------------

enum class ReorderRule { none, reverse_pairs, reverse_windows };

struct SynthTaskSpec {
  std::uint64_t seed = 1;
  std::size_t src_vocab_size = 20;  // regular tokens, excluding the 4 reserved
  std::size_t tgt_vocab_size = 20;
  std::size_t n_train = 100, n_dev = 16, n_test = 16;
  std::size_t len_min = 3, len_max = 8;       // tokens per utterance
  std::size_t rep_min = 2, rep_max = 3;       // frames per token
  std::size_t feat_dim = 8;
  double noise_sigma = 0.1;
  ReorderRule reorder = ReorderRule::none;
  std::size_t reorder_window = 2;
  std::uint64_t mapping_seed = 7;
  std::string lang_src = "src", lang_tgt = "tgt";
};

inline void to_json(nlohmann::json& j, const SynthTaskSpec& s) {
  j = nlohmann::json{{"seed", s.seed},
                     {"src_vocab_size", s.src_vocab_size},
                     {"tgt_vocab_size", s.tgt_vocab_size},
                     {"n_train", s.n_train},
                     {"n_dev", s.n_dev},
                     {"n_test", s.n_test},
                     {"len_min", s.len_min},
                     {"len_max", s.len_max},
                     {"rep_min", s.rep_min},
                     {"rep_max", s.rep_max},
                     {"feat_dim", s.feat_dim},
                     {"noise_sigma", s.noise_sigma},
                     {"reorder", s.reorder == ReorderRule::none            ? "none"
                                 : s.reorder == ReorderRule::reverse_pairs ? "reverse-pairs"
                                                                           : "reverse-windows"},
                     {"reorder_window", s.reorder_window},
                     {"mapping_seed", s.mapping_seed},
                     {"lang_src", s.lang_src},
                     {"lang_tgt", s.lang_tgt}};
}

inline void from_json(const nlohmann::json& j, SynthTaskSpec& s) {
  SynthTaskSpec d;
  s.seed = j.value("seed", d.seed);
  s.src_vocab_size = j.value("src_vocab_size", d.src_vocab_size);
  s.tgt_vocab_size = j.value("tgt_vocab_size", d.tgt_vocab_size);
  s.n_train = j.value("n_train", d.n_train);
  s.n_dev = j.value("n_dev", d.n_dev);
  s.n_test = j.value("n_test", d.n_test);
  s.len_min = j.value("len_min", d.len_min);
  s.len_max = j.value("len_max", d.len_max);
  s.rep_min = j.value("rep_min", d.rep_min);
  s.rep_max = j.value("rep_max", d.rep_max);
  s.feat_dim = j.value("feat_dim", d.feat_dim);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  const std::string r = j.value("reorder", "none");
  if (r == "none")
    s.reorder = ReorderRule::none;
  else if (r == "reverse-pairs")
    s.reorder = ReorderRule::reverse_pairs;
  else if (r == "reverse-windows")
    s.reorder = ReorderRule::reverse_windows;
  else
    throw ConfigError("unknown reorder rule '" + r + "'");
  s.reorder_window = j.value("reorder_window", d.reorder_window);
  s.mapping_seed = j.value("mapping_seed", d.mapping_seed);
  s.lang_src = j.value("lang_src", d.lang_src);
  s.lang_tgt = j.value("lang_tgt", d.lang_tgt);
}

struct SynthCorpus {
  Manifest train, dev, test;
  Vocabulary vocab_src, vocab_tgt;
};

inline std::vector<std::size_t> apply_reorder(const SynthTaskSpec& spec,
                                              std::vector<std::size_t> order) {
  const std::size_t n = order.size();
  switch (spec.reorder) {
    case ReorderRule::none:
      break;
    case ReorderRule::reverse_pairs:
      for (std::size_t i = 0; i + 1 < n; i += 2) std::swap(order[i], order[i + 1]);
      break;
    case ReorderRule::reverse_windows: {
      const std::size_t w = std::max<std::size_t>(1, spec.reorder_window);
      for (std::size_t i = 0; i < n; i += w)
        std::reverse(order.begin() + i, order.begin() + std::min(i + w, n));
      break;
    }
  }
  return order;
}

// Pure function of the spec: each source token has a fixed template vector;
// utterance features repeat the template r in [rep_min, rep_max] times per
// position plus N(0, sigma^2) noise. Transcript is monotonic; translation
// applies the token mapping, then the reorder rule.
inline SynthCorpus generate_synthetic(const SynthTaskSpec& spec) {
  if (spec.rep_min < 1) throw ConfigError("generate_synthetic: rep_min must be >= 1");
  if (spec.src_vocab_size < 1 || spec.tgt_vocab_size < 1)
    throw ConfigError("generate_synthetic: empty vocab");
  if (spec.len_min < 1 || spec.len_max < spec.len_min || spec.rep_max < spec.rep_min)
    throw ConfigError("generate_synthetic: bad length ranges");

  auto make_tokens = [](const char* prefix, std::size_t n) {
    std::vector<std::string> toks = reserved_tokens();
    char buf[32];
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
      toks.push_back(buf);
    }
    return toks;
  };
  SynthCorpus corpus{
      {}, {}, {},
      Vocabulary(spec.lang_src, make_tokens("s", spec.src_vocab_size), Vocabulary::Kind::word),
      Vocabulary(spec.lang_tgt, make_tokens("t", spec.tgt_vocab_size), Vocabulary::Kind::word)};

  // per-token feature templates
  std::vector<std::vector<double>> templates(spec.src_vocab_size);
  for (std::size_t k = 0; k < spec.src_vocab_size; ++k) {
    Rng rng(mix_seed(spec.seed, hash_str("template") ^ k));
    templates[k].resize(spec.feat_dim);
    for (auto& v : templates[k]) v = rng.normal();
  }

  // source token -> target token mapping (seeded permutation, wrapped)
  std::vector<std::size_t> perm(spec.tgt_vocab_size);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng map_rng(mix_seed(spec.mapping_seed, hash_str("mapping")));
  map_rng.shuffle(perm);
  auto map_token = [&](std::size_t src_idx) { return perm[src_idx % spec.tgt_vocab_size]; };

  auto gen_split = [&](const char* split, std::size_t count) {
    Manifest man;
    Rng rng(mix_seed(spec.seed, hash_str(split)));
    for (std::size_t n = 0; n < count; ++n) {
      Utterance u;
      u.id = std::string(split) + "-" + std::to_string(n);
      u.dim = spec.feat_dim;
      u.lang_src = spec.lang_src;
      u.lang_tgt = spec.lang_tgt;
      const std::size_t len = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(spec.len_min),
                          static_cast<std::int64_t>(spec.len_max)));
      std::vector<std::size_t> toks(len);
      for (auto& t : toks)
        t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spec.src_vocab_size) - 1));
      std::string transcript;
      for (std::size_t i = 0; i < len; ++i) {
        if (i) transcript += ' ';
        transcript += corpus.vocab_src.token(static_cast<int>(4 + toks[i]));
      }
      std::vector<std::size_t> mapped(len);
      for (std::size_t i = 0; i < len; ++i) mapped[i] = map_token(toks[i]);
      mapped = apply_reorder(spec, std::move(mapped));
      std::string translation;
      for (std::size_t i = 0; i < len; ++i) {
        if (i) translation += ' ';
        translation += corpus.vocab_tgt.token(static_cast<int>(4 + mapped[i]));
      }
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t reps = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(spec.rep_min),
                            static_cast<std::int64_t>(spec.rep_max)));
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t d = 0; d < spec.feat_dim; ++d) {
            double v = templates[toks[i]][d];
            if (spec.noise_sigma > 0.0) v += rng.normal(0.0, spec.noise_sigma);
            u.features.push_back(static_cast<double>(static_cast<float>(v)));
          }
      }
      u.frames = u.features.size() / spec.feat_dim;
      u.transcript = transcript;
      u.translation = translation;
      man.push_back(std::move(u));
    }
    return man;
  };
  corpus.train = gen_split("train", spec.n_train);
  corpus.dev = gen_split("dev", spec.n_dev);
  corpus.test = gen_split("test", spec.n_test);
  return corpus;
}

}  // namespace jcast::data
