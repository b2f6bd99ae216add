#include <catch2/catch_amalgamated.hpp>

#include "jcast/eval.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "helpers.hpp"

using namespace jcast;

#ifndef JCAST_FIXTURE_DIR
#define JCAST_FIXTURE_DIR "tests/fixtures"
#endif

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("edit distance basics") {
  using V = std::vector<std::string>;
  CHECK(eval::edit_distance(V{}, V{}) == 0);
  CHECK(eval::edit_distance(V{"a", "b"}, V{}) == 2);
  CHECK(eval::edit_distance(V{"a", "b", "c"}, V{"a", "x", "c"}) == 1);
  CHECK(eval::edit_distance(V{"a", "b", "c"}, V{"b", "c", "d"}) == 2);
  CHECK(eval::edit_distance(std::string("kitten"), std::string("sitting")) == 3);
}

TEST_CASE("wer counts word edits over reference length") {
  auto rep = eval::wer({"the cat sat on the mat"}, {"the cat sat on mat"});
  CHECK(rep.errors == 1);
  CHECK(rep.ref_units == 6);
  CHECK(rep.value == Catch::Approx(100.0 / 6));
  CHECK(rep.recompute() == rep.value);

  // WER can exceed 100
  auto bad = eval::wer({"a"}, {"x y z"});
  CHECK(bad.value == 300.0);
  CHECK(eval::wer({"same text"}, {"same text"}).value == 0.0);
  CHECK_THROWS_AS(eval::wer({"a", "b"}, {"a"}), DataError);
  CHECK_THROWS_AS(eval::wer({""}, {"a"}), DataError);  // empty reference corpus
}

TEST_CASE("cer collapses whitespace runs to one counted space") {
  auto a = eval::cer({"ab cd"}, {"ab   cd"});
  CHECK(a.errors == 0);  // runs collapse before comparison
  CHECK(a.ref_units == 5);  // a b space c d
  auto b = eval::cer({"abc"}, {"abd"});
  CHECK(b.errors == 1);
  CHECK(b.ref_units == 3);
  // multibyte characters count as single units
  auto c = eval::cer({"\xc3\xa9t\xc3\xa9"}, {"ete"});
  CHECK(c.ref_units == 3);
  CHECK(c.errors == 2);
}

TEST_CASE("13a tokenization") {
  using V = std::vector<std::string>;
  CHECK(eval::tokenize_13a("Hello, world!") == V{"Hello", ",", "world", "!"});
  CHECK(eval::tokenize_13a("costs 1.5 million") == V{"costs", "1.5", "million"});  // digit.digit kept
  CHECK(eval::tokenize_13a("end.") == V{"end", "."});
  CHECK(eval::tokenize_13a("3-4 well-known") == V{"3", "-", "4", "well-known"});
  CHECK(eval::tokenize_13a("a &amp; b") == V{"a", "&", "b"});
  CHECK(eval::tokenize_13a("say \"hi\"") == V{"say", "\"", "hi", "\""});
  CHECK(eval::tokenize_13a("x<skipped>y") == V{"xy"});
  CHECK(eval::tokenize_13a("at 9:30") == V{"at", "9", ":", "30"});
}

TEST_CASE("bleu identity is 100 and disjoint is ~0") {
  std::vector<std::string> refs = {"the quick brown fox jumps over the lazy dog",
                                   "a stitch in time saves nine"};
  auto perfect = eval::bleu(refs, refs);
  CHECK(perfect.score == Catch::Approx(100.0).margin(1e-9));
  CHECK(perfect.brevity_penalty == 1.0);

  auto nothing = eval::bleu(refs, {"zzz yyy xxx www vvv uuu ttt sss rrr", "qqq ppp ooo nnn mmm lll"});
  CHECK(nothing.score < 2.0);  // exp-smoothed, so small but not exactly zero
  CHECK(nothing.correct[0] == 0);
  CHECK(nothing.recompute() == Catch::Approx(nothing.score));
}

TEST_CASE("bleu degrades monotonically with corruption") {
  std::vector<std::string> refs = {
      "negotiations continued late into the night without any agreement",
      "the committee approved the annual budget after a long debate",
      "heavy rain delayed the second half of the football match"};
  auto corrupt = [&](std::size_t k) {
    std::vector<std::string> hyps;
    for (const auto& r : refs) {
      auto words = eval::split_words(r);
      for (std::size_t i = 0; i < k && i < words.size(); ++i) words[i * 2 % words.size()] = "xx";
      std::string s;
      for (std::size_t i = 0; i < words.size(); ++i) s += (i ? " " : "") + words[i];
      hyps.push_back(s);
    }
    return eval::bleu(refs, hyps).score;
  };
  double prev = 101.0;
  for (std::size_t k : {0, 1, 2, 3, 4}) {
    const double score = corrupt(k);
    CHECK(score < prev);
    prev = score;
  }
}

TEST_CASE("corpus metrics are invariant to segment order") {
  std::vector<std::string> refs = {"one two three", "four five six seven", "eight nine"};
  std::vector<std::string> hyps = {"one two tree", "four five six", "nine eight"};
  auto b1 = eval::bleu(refs, hyps);
  auto c1 = eval::chrf2(refs, hyps);
  auto w1 = eval::wer(refs, hyps);
  std::reverse(refs.begin(), refs.end());
  std::reverse(hyps.begin(), hyps.end());
  CHECK(eval::bleu(refs, hyps).score == b1.score);
  CHECK(eval::chrf2(refs, hyps).score == c1.score);
  CHECK(eval::wer(refs, hyps).value == w1.value);
}

TEST_CASE("brevity penalty punishes short output") {
  std::vector<std::string> refs = {"one two three four five six seven eight"};
  auto shortened = eval::bleu(refs, {"one two three four"});
  CHECK(shortened.brevity_penalty == Catch::Approx(std::exp(1.0 - 8.0 / 4.0)));
  auto longer = eval::bleu(refs, {"one two three four five six seven eight nine ten"});
  CHECK(longer.brevity_penalty == 1.0);
}

TEST_CASE("chrf2 identity is 100, disjoint is ~0, signature is pinned") {
  std::vector<std::string> refs = {"character level metric", "another test sentence"};
  auto perfect = eval::chrf2(refs, refs);
  CHECK(perfect.score == Catch::Approx(100.0).margin(1e-9));
  auto nothing = eval::chrf2(refs, {"zzzzzzzz", "qqqqqqqq"});
  CHECK(nothing.score < 0.5);
  CHECK(perfect.signature == "nrefs:1|case:mixed|eff:yes|nc:6|nw:0|space:no|impl:jcast");
  CHECK(perfect.recompute() == Catch::Approx(perfect.score));
  // whitespace is excluded from n-grams
  CHECK(eval::chrf2({"ab cd"}, {"abcd"}).score == Catch::Approx(100.0).margin(1e-9));
}

TEST_CASE("metrics match the frozen reference fixture within 0.01") {
  const std::string dir = JCAST_FIXTURE_DIR;
  auto refs = read_lines(dir + "/refs.txt");
  auto hyps = read_lines(dir + "/hyps.txt");
  REQUIRE(refs.size() == 20);
  REQUIRE(hyps.size() == 20);
  std::ifstream in(dir + "/metrics.json");
  REQUIRE(in);
  nlohmann::json want = nlohmann::json::parse(in);

  auto b = eval::bleu(refs, hyps);
  CHECK(std::abs(b.score - want["bleu"]["score"].get<double>()) < 0.01);
  CHECK(b.sys_len == want["bleu"]["sys_len"].get<std::size_t>());
  CHECK(b.ref_len == want["bleu"]["ref_len"].get<std::size_t>());
  for (int n = 0; n < 4; ++n) {
    CHECK(b.correct[n] == want["bleu"]["correct"][n].get<std::size_t>());
    CHECK(b.total[n] == want["bleu"]["total"][n].get<std::size_t>());
  }

  auto c = eval::chrf2(refs, hyps);
  CHECK(std::abs(c.score - want["chrf2"]["score"].get<double>()) < 0.01);
  for (std::size_t n = 0; n < 6; ++n) {
    CHECK(c.hyp_count[n] == want["chrf2"]["stats"][n][0].get<std::size_t>());
    CHECK(c.ref_count[n] == want["chrf2"]["stats"][n][1].get<std::size_t>());
    CHECK(c.match_count[n] == want["chrf2"]["stats"][n][2].get<std::size_t>());
  }

  auto w = eval::wer(refs, hyps);
  CHECK(w.errors == want["wer"]["errors"].get<std::size_t>());
  CHECK(w.ref_units == want["wer"]["ref_units"].get<std::size_t>());

  auto ce = eval::cer(refs, hyps);
  CHECK(ce.errors == want["cer"]["errors"].get<std::size_t>());
  CHECK(ce.ref_units == want["cer"]["ref_units"].get<std::size_t>());
}
