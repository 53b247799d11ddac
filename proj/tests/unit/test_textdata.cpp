#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "wordorder/random.hpp"
#include "wordorder/textdata.hpp"

using namespace wordorder;

namespace {

Tokens toks(std::initializer_list<const char*> xs) { return Tokens(xs.begin(), xs.end()); }

SentenceRecord rec(std::string id, Tokens t, std::string task = "generic") {
  SentenceRecord r;
  r.id = std::move(id);
  r.task = std::move(task);
  r.tokens = std::move(t);
  return r;
}

}  // namespace

TEST_CASE("splitmix64 reference stream") {
  SplitMix64 g(0);
  CHECK(g.next() == 0xe220a8397b1dcdafULL);
  CHECK(g.next() == 0x6e789e6aa1b965f4ULL);
  CHECK(g.next() == 0x06c45d188009454fULL);

  SplitMix64 h(5);
  std::vector<std::uint64_t> got;
  for (int i = 0; i < 5; ++i) got.push_back(h.uniform(10));
  CHECK(got == std::vector<std::uint64_t>{8, 4, 3, 9, 1});

  CHECK(derive_seed(1, 0) == 0x48416938ef0dcf6fULL);
  CHECK(derive_seed(7, 3) == 0x53e35d276de1c0ceULL);
}

TEST_CASE("uniform01 and normal stay in range") {
  SplitMix64 g(9);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = g.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double z = g.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("tokenize") {
  CHECK(tokenize("Sam throws the rock.") == toks({"Sam", "throws", "the", "rock", "."}));
  CHECK(tokenize("a") == toks({"a"}));
  CHECK(tokenize("The cat chased the mouse") == toks({"The", "cat", "chased", "the", "mouse"}));
  CHECK(tokenize("  It's  fine,\tok ") == toks({"It", "'", "s", "fine", ",", "ok"}));
  CHECK(tokenize("The Cat", true) == toks({"the", "cat"}));
  CHECK_THROWS_AS(tokenize("   \t "), DataError);
  CHECK_THROWS_AS(tokenize(""), DataError);
}

TEST_CASE("scramble matches the reference shuffle") {
  const auto w = toks({"w1", "w2", "w3"});
  CHECK(scramble(w, 1) == toks({"w1", "w2", "w3"}));
  CHECK(scramble(w, 2) == toks({"w3", "w1", "w2"}));
  CHECK(scramble(w, 3) == toks({"w3", "w2", "w1"}));
  CHECK(scramble(w, 4) == toks({"w3", "w1", "w2"}));
  CHECK(scramble(w, 5) == toks({"w2", "w1", "w3"}));
  CHECK(scramble(w, 6) == toks({"w1", "w2", "w3"}));

  CHECK(scramble_permutation(8, 1) == std::vector<std::size_t>{4, 3, 2, 7, 5, 6, 0, 1});
  CHECK(scramble_permutation(8, 2) == std::vector<std::size_t>{5, 2, 7, 4, 1, 3, 0, 6});
  CHECK(scramble_permutation(8, 42) == std::vector<std::size_t>{3, 1, 6, 2, 4, 0, 7, 5});
}

TEST_CASE("scramble basics") {
  CHECK(scramble(toks({"a"}), 42) == toks({"a"}));
  const auto s = toks({"the", "cat", "sat", "on", "the", "mat"});
  CHECK(scramble(s, 77) == scramble(s, 77));
  CHECK_THROWS_AS(scramble(Tokens{}, 1), DataError);
}

TEST_CASE("scramble preserves the multiset") {
  SplitMix64 g(3);
  for (int trial = 0; trial < 200; ++trial) {
    Tokens t;
    const auto n = 1 + g.uniform(12);
    for (std::uint64_t i = 0; i < n; ++i) t.push_back(std::string(1, static_cast<char>('a' + g.uniform(5))));
    auto sc = scramble(t, g.next());
    auto a = t;
    std::sort(a.begin(), a.end());
    std::sort(sc.begin(), sc.end());
    CHECK(a == sc);
  }
}

TEST_CASE("scramble is uniform over permutations of three tokens") {
  const auto w = toks({"x", "y", "z"});
  std::map<Tokens, int> freq;
  const int n = 12000;
  for (int s = 0; s < n; ++s) ++freq[scramble(w, static_cast<std::uint64_t>(s) + 1000)];
  CHECK(freq.size() == 6);
  const double p = 1.0 / 6.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (const auto& [perm, count] : freq) CHECK(std::abs(count - n * p) <= 3 * sigma);
}

TEST_CASE("make_scramble_set") {
  std::vector<SentenceRecord> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(rec("s" + std::to_string(i), toks({"a", "b", "c", "d"})));
  const auto seeds = default_seeds();
  CHECK(seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5, 6});
  const auto pairs = make_scramble_set(corpus, seeds);
  CHECK(pairs.size() == 60);
  CHECK(pairs[0].sentence_id == "s0");
  CHECK(pairs[5].seed == 6);
  CHECK(pairs[6].sentence_id == "s1");

  std::ostringstream a, b;
  write_scrambles(a, pairs);
  write_scrambles(b, make_scramble_set(corpus, seeds));
  CHECK(a.str() == b.str());

  CHECK_THROWS_AS(make_scramble_set(corpus, std::vector<std::uint64_t>{}), DataError);
  CHECK_THROWS_AS(make_scramble_set(corpus, std::vector<std::uint64_t>{1, 2, 1}), DataError);
}

TEST_CASE("corpus_stats") {
  std::vector<SentenceRecord> one{rec("a", toks({"w", "x", "y", "z"}))};
  CHECK(corpus_stats(one, "generic").avg_length == doctest::Approx(4.0));

  std::vector<SentenceRecord> two{rec("a", toks({"w", "x"}), "t1"), rec("b", toks({"w", "x", "y", "z"}), "t2")};
  CHECK(corpus_stats(two, "*").avg_length == doctest::Approx(3.0));
  CHECK(corpus_stats(two, "*").n_sentences == 2);
  CHECK(corpus_stats(two, "t1").avg_length == doctest::Approx(2.0));
  CHECK_THROWS_AS(corpus_stats(two, "nope"), DataError);

  const auto by = corpus_stats_by_task(two);
  REQUIRE(by.size() == 2);
  CHECK(by[0].task == "t1");
  CHECK(by[1].avg_length > 0);
}

TEST_CASE("sentence files round trip in both formats") {
  std::istringstream in(
      "s1\tsst2\tval\tA fine film.\n"
      "{\"id\":\"s2\",\"task\":\"copa\",\"split\":\"probe\",\"text\":\"It rained, so we stayed.\"}\n"
      "\n"
      "{\"id\":\"s3\",\"tokens\":[\"x\",\"y\"]}\n");
  const auto recs = read_sentences(in);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].tokens == toks({"A", "fine", "film", "."}));
  CHECK(recs[0].split == Split::kVal);
  CHECK(recs[1].task == "copa");
  CHECK(recs[1].split == Split::kProbe);
  CHECK(recs[2].task == "generic");
  CHECK(recs[2].split == Split::kTrain);

  std::ostringstream out;
  write_sentences(out, recs);
  std::istringstream back(out.str());
  const auto again = read_sentences(back);
  REQUIRE(again.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(again[i].id == recs[i].id);
    CHECK(again[i].tokens == recs[i].tokens);
    CHECK(again[i].task == recs[i].task);
  }
}

TEST_CASE("sentence file errors") {
  std::istringstream dup("a\tt\ttrain\tx\na\tt\ttrain\ty\n");
  CHECK_THROWS_AS(read_sentences(dup), DataError);
  std::istringstream bad("{not json\n");
  CHECK_THROWS_AS(read_sentences(bad), DataError);
  std::istringstream fields("a\tb\n");
  CHECK_THROWS_AS(read_sentences(fields), DataError);
  std::istringstream split("a\tt\tdev2\tx\n");
  CHECK_THROWS_AS(read_sentences(split), DataError);
  std::istringstream blank("a\tt\ttrain\t   \n");
  CHECK_THROWS_AS(read_sentences(blank), DataError);
}

TEST_CASE("scramble files round trip") {
  std::vector<ScramblePair> pairs{{"s1", 3, toks({"b", "a"})}, {"s2", 18446744073709551615ULL, toks({"z"})}};
  std::ostringstream out;
  write_scrambles(out, pairs);
  std::istringstream in(out.str());
  const auto back = read_scrambles(in);
  REQUIRE(back.size() == 2);
  CHECK(back[1].seed == 18446744073709551615ULL);
  CHECK(back[0].scrambled == toks({"b", "a"}));
  std::istringstream bad("{\"sentence_id\":\"x\"}\n");
  CHECK_THROWS_AS(read_scrambles(bad), DataError);
}
