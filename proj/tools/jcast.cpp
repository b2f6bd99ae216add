// jcast -- command-line driver: synthetic corpus generation, ASR/ST training,
// joint CTC/attention decoding, scoring, and the full experiment sweep.
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "jcast/common.hpp"
#include "jcast/data.hpp"
#include "jcast/decode.hpp"
#include "jcast/eval.hpp"
#include "jcast/experiment.hpp"
#include "jcast/model.hpp"
#include "jcast/train.hpp"

namespace {

using nlohmann::json;

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw jcast::ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw jcast::ConfigError("config file " + path + ": " + e.what());
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw jcast::DataError("cannot open text file " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
  jcast::data::SynthTaskSpec spec;
  if (!config_path.empty()) spec = load_json_file(config_path).get<jcast::data::SynthTaskSpec>();
  jcast::data::SynthCorpus corpus = jcast::data::generate_synthetic(spec);
  jcast::experiment::save_corpus(
      {corpus.train, corpus.dev, corpus.test, {corpus.vocab_src, corpus.vocab_tgt}}, out_dir);
  std::cout << "wrote corpus to " << out_dir << " (" << corpus.train.size() << " train, "
            << corpus.dev.size() << " dev, " << corpus.test.size() << " test)\n";
  return 0;
}

jcast::model::ModelParams make_or_load_init(const json& cfg,
                                            const jcast::experiment::Corpus& corpus,
                                            const std::string& init_ckpt,
                                            const jcast::train::TrainConfig& tcfg,
                                            const std::vector<std::string>& langs) {
  if (!init_ckpt.empty()) {
    auto ckpt = jcast::train::load_checkpoint(init_ckpt);
    return std::move(ckpt.params);
  }
  jcast::model::ModelConfig mcfg;
  if (cfg.contains("model")) mcfg = cfg.at("model").get<jcast::model::ModelConfig>();
  std::vector<jcast::data::Vocabulary> vocabs;
  for (const auto& l : langs) vocabs.push_back(corpus.vocab(l));
  return jcast::model::init_params(mcfg, vocabs, tcfg.seed);
}

int run_training(const std::string& config_path, const std::string& corpus_dir,
                 const std::string& init_ckpt, const std::string& out_ckpt,
                 const std::string& log_path, bool st, bool retain_ctc, bool discard_ctc) {
  json cfg = load_json_file(config_path);
  jcast::train::TrainConfig tcfg;
  if (cfg.contains("train")) tcfg = cfg.at("train").get<jcast::train::TrainConfig>();
  tcfg.mode = st ? jcast::train::TaskMode::st : jcast::train::TaskMode::asr;
  if (tcfg.lang.empty()) throw jcast::ConfigError("train config: 'lang' missing");
  jcast::experiment::Corpus corpus = jcast::experiment::load_corpus(corpus_dir);

  jcast::model::ModelParams params;
  if (st && !init_ckpt.empty()) {
    auto ckpt = jcast::train::load_checkpoint(init_ckpt);
    params = jcast::train::init_st_from_asr(ckpt.params, retain_ctc && !discard_ctc, tcfg.lang,
                                            tcfg.freeze_non_target, tcfg.seed);
  } else {
    std::vector<std::string> langs;
    if (cfg.contains("languages"))
      langs = cfg.at("languages").get<std::vector<std::string>>();
    else
      langs = {tcfg.lang};
    params = make_or_load_init(cfg, corpus, init_ckpt, tcfg, langs);
  }

  auto result = jcast::train::train(std::move(params), tcfg, corpus.train, corpus.dev,
                                    [](const jcast::train::EpochMetrics& m) {
                                      std::cout << jcast::train::to_json_record(m).dump() << "\n";
                                    });
  jcast::train::save_checkpoint(out_ckpt, {result.best_params, std::nullopt, 0});
  if (!log_path.empty()) jcast::experiment::write_metrics_log(result.log, log_path);
  std::cout << "best dev loss " << result.best_dev_loss << " at epoch " << result.best_epoch
            << "; checkpoint written to " << out_ckpt << "\n";
  return 0;
}

int cmd_decode(const std::string& ckpt_path, const std::string& manifest_path,
               const std::string& out_path, double beta, std::size_t beam,
               const std::string& lang) {
  auto ckpt = jcast::train::load_checkpoint(ckpt_path);
  jcast::data::Manifest man = jcast::data::load_manifest(manifest_path);
  jcast::decode::DecodeConfig dcfg;
  dcfg.beam = beam;
  dcfg.ctc_weight = beta;
  dcfg.lang_tgt = lang;
  dcfg.prepruning_width = 2 * beam;
  dcfg.validate();
  auto run = jcast::experiment::decode_manifest(ckpt.params, man, dcfg);
  jcast::experiment::save_decode_run(run, dcfg, out_path);
  std::cout << "decoded " << run.ids.size() << " utterances -> " << out_path << "\n";
  return 0;
}

int cmd_score(const std::string& metric, const std::string& hyp_path, const std::string& ref_path,
              bool refs_are_jsonl_field, const std::string& field) {
  std::vector<std::string> hyps, refs;
  for (const auto& line : read_lines(hyp_path)) {
    if (line.empty()) continue;
    if (!line.empty() && line.front() == '{') {
      hyps.push_back(json::parse(line).value("text", ""));
    } else {
      hyps.push_back(line);
    }
  }
  for (const auto& line : read_lines(ref_path)) {
    if (line.empty()) continue;
    if (refs_are_jsonl_field || line.front() == '{') {
      refs.push_back(json::parse(line).value(field, ""));
    } else {
      refs.push_back(line);
    }
  }
  if (hyps.size() != refs.size())
    throw jcast::DataError("hypothesis count " + std::to_string(hyps.size()) +
                           " != reference count " + std::to_string(refs.size()));
  json out;
  if (metric == "wer") {
    auto r = jcast::eval::wer(refs, hyps);
    out = {{"metric", "wer"}, {"value", r.value}, {"errors", r.errors}, {"ref_units", r.ref_units}};
  } else if (metric == "cer") {
    auto r = jcast::eval::cer(refs, hyps);
    out = {{"metric", "cer"}, {"value", r.value}, {"errors", r.errors}, {"ref_units", r.ref_units}};
  } else if (metric == "bleu") {
    auto r = jcast::eval::bleu(refs, hyps);
    out = {{"metric", "bleu"},     {"score", r.score}, {"precisions", r.precisions},
           {"bp", r.brevity_penalty}, {"sys_len", r.sys_len}, {"ref_len", r.ref_len},
           {"signature", r.signature}};
  } else if (metric == "chrf2") {
    auto r = jcast::eval::chrf2(refs, hyps);
    out = {{"metric", "chrf2"}, {"score", r.score}, {"signature", r.signature}};
  } else {
    throw jcast::ConfigError("unknown metric '" + metric + "' (wer|cer|bleu|chrf2)");
  }
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path) {
  jcast::experiment::ExperimentSpec spec =
      load_json_file(config_path).get<jcast::experiment::ExperimentSpec>();
  auto result = jcast::experiment::run_sweep(spec);
  std::cout << jcast::experiment::format_table(result);
  std::cout << "results written to " << spec.out_dir << "/results.{txt,jsonl}\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint CTC/attention speech translation toolkit"};
  app.require_subcommand(1);

  std::string config_path, corpus_dir, init_ckpt, out_path, log_path, manifest_path;
  std::string metric = "bleu", lang, ref_path, ref_field = "translation";
  double beta = 0.3;
  std::size_t beam = 10;
  bool retain_ctc = false, discard_ctc = false, refs_jsonl = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus directory");
  synth->add_option("--config", config_path, "task spec JSON (defaults used when omitted)");
  synth->add_option("--out", out_path, "output corpus directory")->required();

  auto* tr_asr = app.add_subcommand("train-asr", "train a speech recognizer");
  tr_asr->add_option("--config", config_path, "JSON with model/train sections")->required();
  tr_asr->add_option("--corpus", corpus_dir, "corpus directory")->required();
  tr_asr->add_option("--init", init_ckpt, "optional checkpoint to resume from");
  tr_asr->add_option("--out", out_path, "output checkpoint path")->required();
  tr_asr->add_option("--log", log_path, "epoch metrics JSONL path");

  auto* tr_st = app.add_subcommand("train-st", "train a speech translator");
  tr_st->add_option("--config", config_path, "JSON with model/train sections")->required();
  tr_st->add_option("--corpus", corpus_dir, "corpus directory")->required();
  tr_st->add_option("--init", init_ckpt, "ASR checkpoint for transfer initialization");
  tr_st->add_flag("--retain-ctc", retain_ctc, "keep the ASR CTC head (with --init)");
  tr_st->add_flag("--discard-ctc", discard_ctc, "re-initialize the CTC head (with --init)");
  tr_st->add_option("--out", out_path, "output checkpoint path")->required();
  tr_st->add_option("--log", log_path, "epoch metrics JSONL path");

  auto* dec = app.add_subcommand("decode", "joint CTC/attention beam search over a manifest");
  dec->add_option("--ckpt", init_ckpt, "model checkpoint")->required();
  dec->add_option("--manifest", manifest_path, "input manifest JSONL")->required();
  dec->add_option("--out", out_path, "output hypotheses JSONL")->required();
  dec->add_option("--beta", beta, "CTC decoding weight in [0,1]");
  dec->add_option("--beam", beam, "beam width");
  dec->add_option("--lang", lang, "target language")->required();

  auto* score = app.add_subcommand("score", "score hypotheses against references");
  score->add_option("--metric", metric, "wer|cer|bleu|chrf2");
  score->add_option("--hyp", out_path, "hypotheses (text lines or decode JSONL)")->required();
  score->add_option("--ref", ref_path, "references (text lines or manifest JSONL)")->required();
  score->add_flag("--ref-jsonl", refs_jsonl, "treat references as JSONL records");
  score->add_option("--ref-field", ref_field, "JSONL field holding the reference text");

  auto* sweep = app.add_subcommand("sweep", "run the init-scheme x alpha x beta experiment grid");
  sweep->add_option("--config", config_path, "experiment spec JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(config_path, out_path);
    if (tr_asr->parsed())
      return run_training(config_path, corpus_dir, init_ckpt, out_path, log_path, false, true,
                          false);
    if (tr_st->parsed()) {
      if (retain_ctc && discard_ctc)
        throw jcast::ConfigError("--retain-ctc and --discard-ctc are mutually exclusive");
      if (!init_ckpt.empty() && !retain_ctc && !discard_ctc) retain_ctc = true;
      return run_training(config_path, corpus_dir, init_ckpt, out_path, log_path, true, retain_ctc,
                          discard_ctc);
    }
    if (dec->parsed()) return cmd_decode(init_ckpt, manifest_path, out_path, beta, beam, lang);
    if (score->parsed()) return cmd_score(metric, out_path, ref_path, refs_jsonl, ref_field);
    if (sweep->parsed()) return cmd_sweep(config_path);
  } catch (const jcast::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const jcast::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const jcast::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
