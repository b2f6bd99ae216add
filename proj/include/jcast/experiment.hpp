// experiment.hpp -- batch experiment harness: corpus directories, decode and
// score runs, and the init-scheme x alpha x beta sweep with resumable cells.
#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jcast/common.hpp"
#include "jcast/data.hpp"
#include "jcast/decode.hpp"
#include "jcast/eval.hpp"
#include "jcast/model.hpp"
#include "jcast/train.hpp"

namespace jcast::experiment {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// corpus directories
// ---------------------------------------------------------------------------

struct Corpus {
  data::Manifest train, dev, test;
  std::vector<data::Vocabulary> vocabs;

  const data::Vocabulary& vocab(const std::string& lang) const {
    for (const auto& v : vocabs)
      if (v.language() == lang) return v;
    throw DataError("corpus has no vocabulary for language '" + lang + "'");
  }
};

inline void save_corpus(const Corpus& c, const std::string& dir) {
  fs::create_directories(dir);
  data::save_manifest(c.train, dir + "/train.jsonl", dir + "/feats");
  data::save_manifest(c.dev, dir + "/dev.jsonl", dir + "/feats");
  data::save_manifest(c.test, dir + "/test.jsonl", dir + "/feats");
  nlohmann::json meta;
  meta["languages"] = nlohmann::json::array();
  for (const auto& v : c.vocabs) {
    const std::string file = "vocab." + v.language() + ".txt";
    v.save(dir + "/" + file);
    meta["languages"].push_back({{"language", v.language()},
                                 {"kind", v.kind() == data::Vocabulary::Kind::word ? "word" : "chars"},
                                 {"file", file},
                                 {"vocab", v.to_json()}});
  }
  std::ofstream(dir + "/meta.json") << meta.dump(2) << "\n";
}

inline Corpus load_corpus(const std::string& dir) {
  Corpus c;
  c.train = data::load_manifest(dir + "/train.jsonl");
  c.dev = data::load_manifest(dir + "/dev.jsonl");
  c.test = data::load_manifest(dir + "/test.jsonl");
  std::ifstream meta_in(dir + "/meta.json");
  if (!meta_in) throw DataError("corpus dir " + dir + " has no meta.json");
  nlohmann::json meta = nlohmann::json::parse(meta_in);
  for (const auto& l : meta.at("languages"))
    c.vocabs.push_back(data::Vocabulary::from_json(l.at("vocab")));
  return c;
}

// ASR pre-training corpus in the ST target language: token sequences over the
// target vocabulary, monotonic transcripts, and acoustics tied to the ST
// source templates through the token mapping (the ST speech then differs from
// seen-language speech only by the reordering the model must learn).
inline Corpus generate_asr_corpus(const data::SynthTaskSpec& st_spec, std::size_t n_train,
                                  std::size_t n_dev, const std::string& lang,
                                  std::uint64_t seed_tag) {
  data::SynthTaskSpec asr_spec = st_spec;
  asr_spec.seed = mix_seed(st_spec.seed, hash_str("asr") ^ seed_tag);
  asr_spec.n_train = n_train;
  asr_spec.n_dev = n_dev;
  asr_spec.n_test = n_dev;
  asr_spec.reorder = data::ReorderRule::none;

  // target-token templates: token m(j) inherits source token j's template
  std::vector<std::size_t> perm(st_spec.tgt_vocab_size);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng map_rng(mix_seed(st_spec.mapping_seed, hash_str("mapping")));
  map_rng.shuffle(perm);
  std::vector<std::size_t> inverse(st_spec.tgt_vocab_size);
  for (std::size_t j = 0; j < perm.size(); ++j) inverse[perm[j]] = j;

  const bool tied = lang == st_spec.lang_tgt && st_spec.src_vocab_size == st_spec.tgt_vocab_size;
  data::SynthTaskSpec gen = asr_spec;
  gen.lang_src = lang;
  gen.lang_tgt = lang;
  gen.src_vocab_size = st_spec.tgt_vocab_size;
  gen.tgt_vocab_size = st_spec.tgt_vocab_size;
  if (!tied) gen.seed = mix_seed(gen.seed, hash_str(lang));
  data::SynthCorpus raw = data::generate_synthetic(gen);

  // rebuild: tokens named after the target vocabulary, features re-templated
  auto make_vocab = [&]() {
    const std::string prefix = lang == st_spec.lang_tgt ? "t" : lang + "_";
    std::vector<std::string> toks = data::reserved_tokens();
    char buf[48];
    for (std::size_t i = 0; i < st_spec.tgt_vocab_size; ++i) {
      std::snprintf(buf, sizeof buf, "%s%03zu", prefix.c_str(), i);
      toks.push_back(buf);
    }
    return data::Vocabulary(lang, std::move(toks), data::Vocabulary::Kind::word);
  };
  data::Vocabulary vocab = make_vocab();

  // per-token template bank for this ASR language
  auto template_of = [&](std::size_t tok_idx) {
    std::vector<double> tmpl(st_spec.feat_dim);
    if (tied) {
      Rng rng(mix_seed(st_spec.seed, hash_str("template") ^ inverse[tok_idx]));
      for (auto& v : tmpl) v = rng.normal();
    } else {
      Rng rng(mix_seed(st_spec.seed, hash_str("template-" + lang) ^ tok_idx));
      for (auto& v : tmpl) v = rng.normal();
    }
    return tmpl;
  };
  std::vector<std::vector<double>> bank(st_spec.tgt_vocab_size);
  for (std::size_t k = 0; k < bank.size(); ++k) bank[k] = template_of(k);

  auto rebuild = [&](data::Manifest& man, const char* split) {
    Rng rng(mix_seed(gen.seed, hash_str(std::string("rebuild-") + split)));
    for (auto& u : man) {
      u.lang_src = lang;
      u.lang_tgt.reset();
      u.translation.reset();
      // re-tokenize the transcript into this language's names and rebuild audio
      std::vector<int> ids;
      {
        std::istringstream iss(*u.transcript);
        std::string tok;
        while (iss >> tok) {
          // raw corpus tokens are s%03d over the same index space
          ids.push_back(std::stoi(tok.substr(1)));
        }
      }
      std::string text;
      u.features.clear();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) text += ' ';
        text += vocab.token(static_cast<int>(4 + ids[i]));
        const std::size_t reps = static_cast<std::size_t>(rng.uniform_int(
            static_cast<std::int64_t>(st_spec.rep_min), static_cast<std::int64_t>(st_spec.rep_max)));
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t d = 0; d < st_spec.feat_dim; ++d) {
            double v = bank[ids[i]][d];
            if (st_spec.noise_sigma > 0.0) v += rng.normal(0.0, st_spec.noise_sigma);
            u.features.push_back(static_cast<double>(static_cast<float>(v)));
          }
      }
      u.frames = u.features.size() / st_spec.feat_dim;
      u.transcript = text;
    }
  };
  rebuild(raw.train, "train");
  rebuild(raw.dev, "dev");
  rebuild(raw.test, "test");
  return Corpus{raw.train, raw.dev, raw.test, {vocab}};
}

// ---------------------------------------------------------------------------
// decode + score runs
// ---------------------------------------------------------------------------

struct DecodeRun {
  std::vector<std::string> ids;
  std::vector<std::string> texts;
  std::vector<decode::DecodedHypothesis> hyps;
};

inline DecodeRun decode_manifest(const model::ModelParams& params, const data::Manifest& man,
                                 const decode::DecodeConfig& cfg) {
  DecodeRun run;
  const auto& vocab = params.vocab(cfg.lang_tgt);
  for (const auto& u : man) {
    model::RunContext ctx{false, 0, 0};
    Tensor feats = Tensor::from_data({u.frames, u.dim}, u.features);
    auto states = model::encode(params, feats, ctx);
    auto ranked = decode::joint_beam_search(params, states, cfg);
    run.ids.push_back(u.id);
    run.texts.push_back(ranked.empty() ? "" : vocab.decode(ranked.front().tokens));
    run.hyps.push_back(ranked.empty() ? decode::DecodedHypothesis{} : ranked.front());
  }
  return run;
}

inline void save_decode_run(const DecodeRun& run, const decode::DecodeConfig& cfg,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write hypotheses file " + path);
  for (std::size_t i = 0; i < run.ids.size(); ++i) {
    nlohmann::json j;
    j["id"] = run.ids[i];
    j["text"] = run.texts[i];
    j["combined"] = run.hyps[i].combined;
    j["att"] = run.hyps[i].att_logp;
    j["ctc"] = run.hyps[i].ctc_logp;
    j["beta"] = cfg.ctc_weight;
    j["beam"] = cfg.beam;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct InitScheme {
  std::string name;       // random | mono-asr | multi-asr
  bool retain_ctc = true;
  std::string label() const {
    if (name == "random") return name;
    return name + (retain_ctc ? "+ctc" : "-ctc");
  }
};

struct ExperimentSpec {
  std::uint64_t seed = 1;
  std::string out_dir;
  data::SynthTaskSpec task;                 // synthetic task (or corpus_dir below)
  std::string corpus_dir;                   // when set, load instead of generating
  model::ModelConfig model;
  train::TrainConfig train_asr;
  train::TrainConfig train_st;
  std::size_t asr_train_utts = 400, asr_dev_utts = 16;
  std::vector<InitScheme> init_schemes;
  std::vector<double> alpha_grid{0.0, 0.1};
  std::vector<double> beta_grid{0.0, 0.3};
  std::size_t beam = 10;
};

inline void from_json(const nlohmann::json& j, InitScheme& s) {
  s.name = j.at("name").get<std::string>();
  if (s.name != "random" && s.name != "mono-asr" && s.name != "multi-asr")
    throw ConfigError("init_schemes[].name must be random|mono-asr|multi-asr, got '" + s.name + "'");
  s.retain_ctc = j.value("retain_ctc", true);
}
inline void to_json(nlohmann::json& j, const InitScheme& s) {
  j = nlohmann::json{{"name", s.name}, {"retain_ctc", s.retain_ctc}};
}

inline void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  ExperimentSpec d;
  s.seed = j.value("seed", d.seed);
  s.out_dir = j.value("out_dir", "");
  if (s.out_dir.empty()) throw ConfigError("experiment spec: out_dir missing");
  if (j.contains("task")) s.task = j.at("task").get<data::SynthTaskSpec>();
  s.corpus_dir = j.value("corpus_dir", "");
  if (j.contains("model")) s.model = j.at("model").get<model::ModelConfig>();
  if (j.contains("train_asr")) s.train_asr = j.at("train_asr").get<train::TrainConfig>();
  if (j.contains("train_st")) s.train_st = j.at("train_st").get<train::TrainConfig>();
  s.asr_train_utts = j.value("asr_train_utts", d.asr_train_utts);
  s.asr_dev_utts = j.value("asr_dev_utts", d.asr_dev_utts);
  if (j.contains("init_schemes"))
    s.init_schemes = j.at("init_schemes").get<std::vector<InitScheme>>();
  else
    s.init_schemes = {{"random", true}, {"mono-asr", true}};
  if (s.init_schemes.empty()) throw ConfigError("experiment spec: init_schemes empty");
  s.alpha_grid = j.value("alpha_grid", d.alpha_grid);
  s.beta_grid = j.value("beta_grid", d.beta_grid);
  if (s.alpha_grid.empty() || s.beta_grid.empty())
    throw ConfigError("experiment spec: alpha/beta grids must be non-empty");
  s.beam = j.value("beam", d.beam);
}
inline void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  j = nlohmann::json{{"seed", s.seed},
                     {"out_dir", s.out_dir},
                     {"task", s.task},
                     {"corpus_dir", s.corpus_dir},
                     {"model", s.model},
                     {"train_asr", s.train_asr},
                     {"train_st", s.train_st},
                     {"asr_train_utts", s.asr_train_utts},
                     {"asr_dev_utts", s.asr_dev_utts},
                     {"init_schemes", s.init_schemes},
                     {"alpha_grid", s.alpha_grid},
                     {"beta_grid", s.beta_grid},
                     {"beam", s.beam}};
}

struct CellResult {
  std::string scheme_label;
  double alpha = 0.0;
  std::vector<double> dev_bleu;  // aligned with beta_grid
  double best_beta = 0.0;
  double test_bleu = 0.0;
};

struct SweepResult {
  std::vector<double> beta_grid;
  std::vector<CellResult> cells;
};

namespace detail {

inline std::string cell_key(const InitScheme& scheme, double alpha) {
  std::ostringstream os;
  os << scheme.label() << "-a" << alpha;
  std::string s = os.str();
  for (auto& c : s)
    if (c == '.') c = 'p';
  return s;
}

inline std::string hash_of(const nlohmann::json& j) {
  return std::to_string(hash_str(j.dump()));
}

inline bool marker_matches(const std::string& path, const std::string& hash) {
  std::ifstream in(path);
  if (!in) return false;
  std::string stored;
  std::getline(in, stored);
  return stored == hash;
}

inline std::vector<std::string> references(const data::Manifest& man) {
  std::vector<std::string> refs;
  for (const auto& u : man) {
    if (!u.translation) throw DataError("utterance '" + u.id + "' has no translation reference");
    refs.push_back(*u.translation);
  }
  return refs;
}

}  // namespace detail

inline void write_metrics_log(const std::vector<train::EpochMetrics>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& m : log) out << train::to_json_record(m).dump() << '\n';
}

// Trains (or reuses) the ASR checkpoint a scheme needs. Multi-ASR trains on
// the target language plus one auxiliary language, sharing bodies.
inline std::string ensure_asr_checkpoint(const ExperimentSpec& spec, const Corpus& st_corpus,
                                         bool multilingual, std::size_t* steps_executed) {
  const std::string tag = multilingual ? "multi" : "mono";
  const std::string dir = spec.out_dir + "/asr";
  fs::create_directories(dir);
  const std::string ckpt_path = dir + "/" + tag + ".ckpt";

  nlohmann::json cell_cfg;
  cell_cfg["model"] = spec.model;
  cell_cfg["train"] = spec.train_asr;
  cell_cfg["task"] = spec.task;
  cell_cfg["multilingual"] = multilingual;
  cell_cfg["asr_train_utts"] = spec.asr_train_utts;
  const std::string hash = detail::hash_of(cell_cfg);
  if (detail::marker_matches(dir + "/" + tag + ".done", hash) && fs::exists(ckpt_path))
    return ckpt_path;

  Corpus asr = generate_asr_corpus(spec.task, spec.asr_train_utts, spec.asr_dev_utts,
                                   spec.task.lang_tgt, 0);
  std::vector<data::Vocabulary> vocabs = {asr.vocabs[0]};
  data::Manifest train_man = asr.train, dev_man = asr.dev;
  if (multilingual) {
    Corpus aux = generate_asr_corpus(spec.task, spec.asr_train_utts, spec.asr_dev_utts, "aux", 1);
    vocabs.push_back(aux.vocabs[0]);
    train_man.insert(train_man.end(), aux.train.begin(), aux.train.end());
    dev_man.insert(dev_man.end(), aux.dev.begin(), aux.dev.end());
  }
  model::ModelParams params = model::init_params(spec.model, vocabs, spec.seed);
  train::TrainConfig cfg = spec.train_asr;
  cfg.mode = train::TaskMode::asr;
  cfg.lang = spec.task.lang_tgt;
  auto result = train::train(std::move(params), cfg, train_man, dev_man);
  if (steps_executed) *steps_executed += cfg.epochs;  // coarse: epochs run
  write_metrics_log(result.log, dir + "/" + tag + ".log.jsonl");
  train::save_checkpoint(ckpt_path, {result.best_params, std::nullopt, 0});
  std::ofstream(dir + "/" + tag + ".done") << hash << "\n";
  return ckpt_path;
}

// One sweep cell: ST training under (scheme, alpha), dev decode per beta,
// dev-selected beta (ties -> smaller), test decode at the selected beta.
// Finished cells are skipped via a config-hash marker.
inline CellResult run_cell(const ExperimentSpec& spec, const Corpus& corpus,
                           const InitScheme& scheme, double alpha, std::size_t* steps_executed) {
  const std::string key = detail::cell_key(scheme, alpha);
  const std::string dir = spec.out_dir + "/cells/" + key;
  fs::create_directories(dir);

  nlohmann::json cell_cfg;
  cell_cfg["model"] = spec.model;
  cell_cfg["train"] = spec.train_st;
  cell_cfg["task"] = spec.task;
  cell_cfg["scheme"] = scheme;
  cell_cfg["alpha"] = alpha;
  cell_cfg["beta_grid"] = spec.beta_grid;
  cell_cfg["beam"] = spec.beam;
  cell_cfg["asr_train_utts"] = spec.asr_train_utts;
  const std::string hash = detail::hash_of(cell_cfg);

  CellResult result;
  result.scheme_label = scheme.label();
  result.alpha = alpha;
  const std::string done_path = dir + "/done.json";
  if (fs::exists(done_path)) {
    std::ifstream in(done_path);
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("hash", "") == hash) {
      result.dev_bleu = j.at("dev_bleu").get<std::vector<double>>();
      result.best_beta = j.at("best_beta").get<double>();
      result.test_bleu = j.at("test_bleu").get<double>();
      return result;
    }
  }

  const std::string tgt = spec.task.lang_tgt;
  model::ModelParams params;
  if (scheme.name == "random") {
    params = model::init_params(spec.model, {corpus.vocab(tgt)}, mix_seed(spec.seed, hash_str(key)));
  } else {
    const std::string asr_ckpt =
        ensure_asr_checkpoint(spec, corpus, scheme.name == "multi-asr", steps_executed);
    auto ckpt = train::load_checkpoint(asr_ckpt);
    params = train::init_st_from_asr(ckpt.params, scheme.retain_ctc, tgt,
                                     spec.train_st.freeze_non_target,
                                     mix_seed(spec.seed, hash_str(key)));
  }

  train::TrainConfig cfg = spec.train_st;
  cfg.mode = train::TaskMode::st;
  cfg.lang = tgt;
  cfg.ctc_weight = alpha;
  auto trained = train::train(std::move(params), cfg, corpus.train, corpus.dev);
  if (steps_executed) *steps_executed += cfg.epochs;
  write_metrics_log(trained.log, dir + "/train.log.jsonl");
  train::save_checkpoint(dir + "/st.ckpt", {trained.best_params, std::nullopt, 0});

  const auto dev_refs = detail::references(corpus.dev);
  const auto test_refs = detail::references(corpus.test);
  for (double beta : spec.beta_grid) {
    decode::DecodeConfig dcfg;
    dcfg.beam = spec.beam;
    dcfg.ctc_weight = beta;
    dcfg.lang_tgt = tgt;
    dcfg.prepruning_width = 2 * spec.beam;
    DecodeRun run = decode_manifest(trained.best_params, corpus.dev, dcfg);
    std::ostringstream fn;
    fn << dir << "/dev.b" << beta << ".hyps.jsonl";
    save_decode_run(run, dcfg, fn.str());
    result.dev_bleu.push_back(eval::bleu(dev_refs, run.texts).score);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < spec.beta_grid.size(); ++i)
    if (result.dev_bleu[i] > result.dev_bleu[best]) best = i;  // ties keep the smaller beta
  result.best_beta = spec.beta_grid[best];
  {
    decode::DecodeConfig dcfg;
    dcfg.beam = spec.beam;
    dcfg.ctc_weight = result.best_beta;
    dcfg.lang_tgt = tgt;
    dcfg.prepruning_width = 2 * spec.beam;
    DecodeRun run = decode_manifest(trained.best_params, corpus.test, dcfg);
    save_decode_run(run, dcfg, dir + "/test.hyps.jsonl");
    result.test_bleu = eval::bleu(test_refs, run.texts).score;
  }

  nlohmann::json done;
  done["hash"] = hash;
  done["dev_bleu"] = result.dev_bleu;
  done["best_beta"] = result.best_beta;
  done["test_bleu"] = result.test_bleu;
  std::ofstream(done_path) << done.dump(2) << "\n";
  return result;
}

inline std::string format_table(const SweepResult& r) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "init" << std::setw(8) << "alpha";
  for (double b : r.beta_grid) {
    std::ostringstream h;
    h << "b=" << b;
    os << std::setw(10) << h.str();
  }
  os << std::setw(10) << "best_b" << std::setw(10) << "test" << "\n";
  os << std::setprecision(2) << std::fixed;
  for (const auto& c : r.cells) {
    os << std::left << std::setw(18) << c.scheme_label << std::setw(8) << c.alpha;
    for (std::size_t i = 0; i < r.beta_grid.size(); ++i) {
      std::ostringstream v;
      v << std::setprecision(2) << std::fixed << c.dev_bleu[i]
        << (r.beta_grid[i] == c.best_beta ? "*" : "");
      os << std::setw(10) << v.str();
    }
    os << std::setw(10) << c.best_beta << std::setw(10) << c.test_bleu << "\n";
  }
  return os.str();
}

// Full sweep: rows = init schemes x alpha, columns = beta, cells = dev BLEU
// with the dev-selected beta marked; resumable; deterministic given the spec.
inline SweepResult run_sweep(const ExperimentSpec& spec, std::size_t* steps_executed = nullptr) {
  fs::create_directories(spec.out_dir);
  {
    nlohmann::json j = spec;
    std::ofstream(spec.out_dir + "/spec.materialized.json") << j.dump(2) << "\n";
  }
  Corpus corpus;
  if (!spec.corpus_dir.empty()) {
    corpus = load_corpus(spec.corpus_dir);
  } else {
    const std::string cdir = spec.out_dir + "/corpus";
    nlohmann::json task_j = spec.task;
    const std::string hash = detail::hash_of(task_j);
    if (!detail::marker_matches(cdir + "/.done", hash)) {
      data::SynthCorpus synth = data::generate_synthetic(spec.task);
      save_corpus(Corpus{synth.train, synth.dev, synth.test, {synth.vocab_src, synth.vocab_tgt}},
                  cdir);
      std::ofstream(cdir + "/.done") << hash << "\n";
    }
    corpus = load_corpus(cdir);
  }

  SweepResult result;
  result.beta_grid = spec.beta_grid;
  for (const auto& scheme : spec.init_schemes)
    for (double alpha : spec.alpha_grid)
      result.cells.push_back(run_cell(spec, corpus, scheme, alpha, steps_executed));

  std::ofstream(spec.out_dir + "/results.txt") << format_table(result);
  {
    std::ofstream out(spec.out_dir + "/results.jsonl", std::ios::binary);
    for (const auto& c : result.cells) {
      nlohmann::json j;
      j["init"] = c.scheme_label;
      j["alpha"] = c.alpha;
      j["beta_grid"] = result.beta_grid;
      j["dev_bleu"] = c.dev_bleu;
      j["best_beta"] = c.best_beta;
      j["test_bleu"] = c.test_bleu;
      out << j.dump() << '\n';
    }
  }
  return result;
}

}  // namespace jcast::experiment
