#include <catch2/catch_amalgamated.hpp>

#include "jcast/train.hpp"

#include <filesystem>
#include <fstream>

#include "helpers.hpp"

using namespace jcast;
using test::tiny_config;
using test::tiny_vocab;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  static int counter = 0;
  return (fs::temp_directory_path() /
          ("jcast-train-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + name))
      .string();
}

data::Manifest tiny_manifest(std::size_t n, std::uint64_t seed, bool st) {
  data::SynthTaskSpec spec;
  spec.seed = seed;
  spec.n_train = n;
  spec.n_dev = 1;
  spec.n_test = 1;
  spec.src_vocab_size = 5;
  spec.tgt_vocab_size = 5;
  spec.feat_dim = 4;
  // rep_min = 4 guarantees CTC feasibility after 2x subsampling even for
  // all-repeat targets (T' >= 2L - 1)
  spec.len_min = 2;
  spec.len_max = 3;
  spec.rep_min = 4;
  spec.rep_max = 5;
  spec.lang_src = "aa";
  spec.lang_tgt = "bb";
  if (st) spec.reorder = data::ReorderRule::reverse_pairs;
  auto corpus = data::generate_synthetic(spec);
  return corpus.train;
}

model::ModelParams tiny_params(std::uint64_t seed = 1) {
  // vocab names line up with tiny_manifest's s000.. tokens via word vocab
  data::SynthTaskSpec spec;
  spec.src_vocab_size = 5;
  spec.tgt_vocab_size = 5;
  spec.lang_src = "aa";
  spec.lang_tgt = "bb";
  spec.n_train = 1;
  spec.feat_dim = 4;
  auto corpus = data::generate_synthetic(spec);
  return model::init_params(tiny_config(), {corpus.vocab_src, corpus.vocab_tgt}, seed);
}

}  // namespace

TEST_CASE("asr loss interpolates exactly at the lambda boundaries") {
  auto params = tiny_params();
  auto man = tiny_manifest(1, 3, false);
  model::RunContext ctx{false, 0, 0};

  auto at = [&](double lambda) {
    model::RunContext c{false, 0, 0};
    return train::asr_loss(params, man[0], lambda, "aa", c).loss.item();
  };
  // recompute the two branch losses directly
  const auto y = params.vocab("aa").encode(*man[0].transcript);
  Tensor feats = Tensor::from_data({man[0].frames, man[0].dim}, man[0].features);
  auto states = model::encode(params, feats, ctx);
  const double l_ctc = ctc::ctc_loss(model::ctc_logits(params, states, "aa"), y).item();
  const double l_att = train::attention_loss(params, states, y, "aa", ctx).item();

  CHECK(at(0.0) == l_att);                 // exact, not approximate
  CHECK(at(1.0) == l_ctc);
  CHECK(at(0.5) == Catch::Approx(0.5 * l_ctc + 0.5 * l_att).epsilon(1e-12));
  CHECK(at(0.3) == Catch::Approx(0.3 * l_ctc + 0.7 * l_att).epsilon(1e-12));
}

TEST_CASE("st loss uses translation targets and the configured ctc side") {
  auto params = tiny_params();
  auto man = tiny_manifest(1, 5, true);
  model::RunContext ctx{false, 0, 0};
  const auto z = params.vocab("bb").encode(*man[0].translation);
  const auto y = params.vocab("aa").encode(*man[0].transcript);
  Tensor feats = Tensor::from_data({man[0].frames, man[0].dim}, man[0].features);
  auto states = model::encode(params, feats, ctx);
  const double att = train::attention_loss(params, states, z, "bb", ctx).item();
  const double ctc_tgt = ctc::ctc_loss(model::ctc_logits(params, states, "bb"), z).item();
  const double ctc_src = ctc::ctc_loss(model::ctc_logits(params, states, "aa"), y).item();

  model::RunContext c1{false, 0, 0};
  const double on_translation =
      train::st_loss(params, man[0], 0.4, "bb", train::CtcTargetSide::translation, c1).loss.item();
  CHECK(on_translation == Catch::Approx(0.4 * ctc_tgt + 0.6 * att).epsilon(1e-12));
  model::RunContext c2{false, 0, 0};
  const double on_transcript =
      train::st_loss(params, man[0], 0.4, "bb", train::CtcTargetSide::transcript, c2).loss.item();
  CHECK(on_transcript == Catch::Approx(0.4 * ctc_src + 0.6 * att).epsilon(1e-12));
  model::RunContext c3{false, 0, 0};
  CHECK(train::st_loss(params, man[0], 0.0, "bb", train::CtcTargetSide::translation, c3)
            .loss.item() == att);
}

TEST_CASE("infeasible ctc alignments are skipped, not fatal") {
  auto params = tiny_params();
  auto man = tiny_manifest(1, 3, false);
  man[0].frames = 4;  // 4 frames subsample to 1, fewer than the target tokens
  man[0].features.resize(4 * man[0].dim);
  model::RunContext ctx{false, 0, 0};
  auto out = train::asr_loss(params, man[0], 0.5, "aa", ctx);
  CHECK(out.skipped);
  auto att_only = train::asr_loss(params, man[0], 0.0, "aa", ctx);
  CHECK_FALSE(att_only.skipped);  // attention branch has no alignment constraint
}

TEST_CASE("lr schedule: linear warmup then inverse sqrt") {
  CHECK(train::lr_schedule(1, 400, 1.0) == Catch::Approx(1.0 / 400));
  CHECK(train::lr_schedule(200, 400, 1.0) == Catch::Approx(0.5));
  CHECK(train::lr_schedule(400, 400, 1.0) == Catch::Approx(1.0));
  CHECK(train::lr_schedule(1600, 400, 1.0) == Catch::Approx(0.5));  // sqrt(400/1600)
  CHECK(train::lr_schedule(400, 400, 5e-3) == Catch::Approx(5e-3));
  CHECK_THROWS_AS(train::lr_schedule(0, 400, 1.0), ContractError);
}

TEST_CASE("adam single step matches the hand-computed update") {
  model::ModelParams p;
  p.config = tiny_config();
  p.tensors.emplace("w", Tensor::from_data({2}, {1.0, -2.0}).set_requires_grad());
  Tensor loss = sum(mul(p.at("w"), p.at("w")));
  backward(loss);  // grad = 2w = [2, -4]
  train::Adam opt;
  opt.step(p, 0.1, 0.0);
  // bias-corrected first step: m_hat = g, v_hat = g^2, update = lr * g/(|g|+eps)
  CHECK(p.at("w").at(0) == Catch::Approx(1.0 - 0.1 * (2.0 / (2.0 + 1e-9))).epsilon(1e-12));
  CHECK(p.at("w").at(1) == Catch::Approx(-2.0 + 0.1 * (4.0 / (4.0 + 1e-9))).epsilon(1e-12));
}

TEST_CASE("adam global norm clipping and frozen skipping") {
  model::ModelParams p;
  p.config = tiny_config();
  p.tensors.emplace("a", Tensor::from_data({1}, {0.0}).set_requires_grad());
  p.tensors.emplace("b", Tensor::from_data({1}, {5.0}).set_requires_grad());
  p.frozen.insert("b");
  Tensor loss = add(mul_scalar(p.at("a"), 3.0), mul_scalar(p.at("b"), 100.0));
  backward(loss);  // grads: a=3, b=100 (frozen, excluded from the norm)
  train::Adam opt;
  opt.step(p, 0.1, 1.0);  // norm over non-frozen = 3 -> scale 1/3
  const double g = 1.0;   // clipped gradient of a
  CHECK(p.at("a").at(0) == Catch::Approx(-0.1 * (g / (g + 1e-9))).epsilon(1e-9));
  CHECK(p.at("b").at(0) == 5.0);  // bitwise untouched
  CHECK(opt.m().count("b") == 0);
}

TEST_CASE("loss scaling scales gradients linearly") {
  auto params = tiny_params();
  params.set_requires_grad(true);
  auto man = tiny_manifest(1, 3, false);
  model::RunContext c1{false, 0, 0};
  backward(train::asr_loss(params, man[0], 0.5, "aa", c1).loss);
  const auto g1 = params.at("enc.in_proj.w").grad();
  params.zero_grad();
  model::RunContext c2{false, 0, 0};
  backward(mul_scalar(train::asr_loss(params, man[0], 0.5, "aa", c2).loss, 2.0));
  const auto g2 = params.at("enc.in_proj.w").grad();
  for (std::size_t i = 0; i < g1.size(); ++i)
    CHECK(g2[i] == Catch::Approx(2.0 * g1[i]).epsilon(1e-11).margin(1e-14));
}

TEST_CASE("checkpoint round trip is byte-identical") {
  auto params = tiny_params(42);
  params.frozen.insert("head.bb.emb");
  const std::string p1 = temp_path(".ckpt"), p2 = temp_path(".ckpt");
  train::Checkpoint ck{params, std::nullopt, 1234};
  train::save_checkpoint(p1, ck);
  auto loaded = train::load_checkpoint(p1);
  CHECK(loaded.step == 1234);
  CHECK(loaded.params.frozen == params.frozen);
  CHECK(loaded.params.vocabs.size() == 2);
  for (const auto& [name, t] : params.tensors) {
    CHECK(loaded.params.at(name).shape() == t.shape());
    CHECK(loaded.params.at(name).data() == t.data());
  }
  train::save_checkpoint(p2, loaded);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("checkpoint carries optimizer state and rejects corruption") {
  auto params = tiny_params(7);
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> opt;
  opt.emplace("enc.in_proj.b", std::make_pair(std::vector<double>{0.1, -0.2},
                                              std::vector<double>{0.01, 0.02}));
  const std::string path = temp_path(".ckpt");
  train::save_checkpoint(path, {params, opt, 9});
  auto loaded = train::load_checkpoint(path);
  REQUIRE(loaded.optimizer_state.has_value());
  CHECK(loaded.optimizer_state->at("enc.in_proj.b").first == opt.at("enc.in_proj.b").first);
  // bad magic
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("NOTJCAST", 8);
  }
  CHECK_THROWS_AS(train::load_checkpoint(path), DataError);
  CHECK_THROWS_AS(train::load_checkpoint(temp_path(".missing")), DataError);
  fs::remove(path);
}

TEST_CASE("init_st_from_asr: retain keeps, discard re-initializes the ctc head") {
  auto asr = tiny_params(11);
  auto kept = train::init_st_from_asr(asr, true, "bb", true, 999);
  CHECK(kept.at("head.bb.ctc.w").data() == asr.at("head.bb.ctc.w").data());
  auto fresh = train::init_st_from_asr(asr, false, "bb", true, 999);
  CHECK(fresh.at("head.bb.ctc.w").data() != asr.at("head.bb.ctc.w").data());
  // re-init is a pure function of the seed
  auto fresh2 = train::init_st_from_asr(asr, false, "bb", true, 999);
  CHECK(fresh.at("head.bb.ctc.w").data() == fresh2.at("head.bb.ctc.w").data());
  for (double v : fresh.at("head.bb.ctc.b").data()) CHECK(v == 0.0);
  // bodies and other heads copied in both cases
  CHECK(kept.at("enc.in_proj.w").data() == asr.at("enc.in_proj.w").data());
  CHECK(fresh.at("head.aa.emb").data() == asr.at("head.aa.emb").data());
  // freezing marks exactly the non-target head tensors
  std::set<std::string> want;
  for (const char* part : {".ctc.w", ".ctc.b", ".emb", ".out.w", ".out.b"})
    want.insert(std::string("head.aa") + part);
  CHECK(kept.frozen == want);
  auto unfrozen = train::init_st_from_asr(asr, true, "bb", false, 0);
  CHECK(unfrozen.frozen.empty());
  CHECK_THROWS_AS(train::init_st_from_asr(asr, true, "zz", true, 0), ConfigError);
}

TEST_CASE("training runs, logs epochs, and is deterministic") {
  auto man = tiny_manifest(6, 21, false);
  auto dev = tiny_manifest(2, 22, false);
  train::TrainConfig cfg;
  cfg.mode = train::TaskMode::asr;
  cfg.lang = "aa";
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.warmup_steps = 4;
  cfg.peak_lr = 1e-3;
  cfg.seed = 5;

  auto r1 = train::train(tiny_params(2), cfg, man, dev);
  auto r2 = train::train(tiny_params(2), cfg, man, dev);
  REQUIRE(r1.log.size() == 2);
  CHECK(r1.log[0].epoch == 1);
  CHECK(r1.log[0].lr > 0.0);
  for (const auto& [name, t] : r1.final_params.tensors)
    CHECK(r2.final_params.at(name).data() == t.data());  // bitwise
  CHECK(r1.best_dev_loss == r2.best_dev_loss);
  // training moved the parameters
  CHECK(r1.final_params.at("enc.in_proj.w").data() != tiny_params(2).at("enc.in_proj.w").data());

  train::TrainConfig bad = cfg;
  bad.lang = "zz";
  CHECK_THROWS_AS(train::train(tiny_params(2), bad, man, dev), ConfigError);
  CHECK_THROWS_AS(train::train(tiny_params(2), cfg, {}, dev), DataError);
}

TEST_CASE("st training leaves frozen non-target heads bitwise unchanged") {
  auto asr = tiny_params(31);
  auto st = train::init_st_from_asr(asr, true, "bb", true, 1);
  auto man = tiny_manifest(6, 41, true);
  auto dev = tiny_manifest(2, 42, true);
  train::TrainConfig cfg;
  cfg.mode = train::TaskMode::st;
  cfg.lang = "bb";
  cfg.ctc_weight = 0.1;
  cfg.epochs = 1;
  cfg.batch_size = 3;
  cfg.warmup_steps = 4;
  cfg.peak_lr = 1e-3;
  auto result = train::train(std::move(st), cfg, man, dev);
  for (const char* part : {".ctc.w", ".ctc.b", ".emb", ".out.w", ".out.b"}) {
    CHECK(result.final_params.at(std::string("head.aa") + part).data() ==
          asr.at(std::string("head.aa") + part).data());
  }
  CHECK(result.final_params.at("head.bb.out.w").data() != asr.at("head.bb.out.w").data());
}

TEST_CASE("train config validation and json round trip") {
  train::TrainConfig cfg;
  cfg.lang = "aa";
  cfg.ctc_weight = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.ctc_weight = 0.3;
  cfg.warmup_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.warmup_steps = 10;
  cfg.mode = train::TaskMode::st;
  cfg.ctc_target_side = train::CtcTargetSide::transcript;
  nlohmann::json j = cfg;
  auto back = j.get<train::TrainConfig>();
  CHECK(back.mode == train::TaskMode::st);
  CHECK(back.ctc_target_side == train::CtcTargetSide::transcript);
  CHECK(back.lang == "aa");
}
