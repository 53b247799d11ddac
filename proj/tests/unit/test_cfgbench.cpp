#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "wordorder/cfgbench.hpp"
#include "wordorder/random.hpp"

using namespace wordorder;

namespace {

const std::string kData = WORDORDER_DATA_DIR;

Grammar parse(const char* text) {
  std::istringstream in(text);
  return Grammar::parse(in);
}

Grammar type_a() { return Grammar::load(kData + "/grammars/type_a.cfg"); }
Grammar type_b() { return Grammar::load(kData + "/grammars/type_b.cfg"); }

bool has(const std::vector<std::string>& xs, const char* x) { return std::find(xs.begin(), xs.end(), x) != xs.end(); }

}  // namespace

TEST_CASE("grammar parsing") {
  const auto g = parse(
      "# comment\n"
      "%start S\n"
      "%type B\n"
      "S -> NP V NP | NP V\n"
      "NP -> Name | the N\n"
      "%lexicon\n"
      "Name [proper] : Ann Bo\n"
      "N [common inanimate] : rock\n"
      "V : sees\n");
  CHECK(g.start() == "S");
  CHECK(g.type() == SentenceType::kB);
  CHECK(g.rules().at("S").size() == 2);
  CHECK(g.is_nonterminal("NP"));
  CHECK(g.is_category("Name"));
  CHECK(!g.is_category("the"));
  CHECK(has(g.features_of("rock"), "inanimate"));
  CHECK(g.features_of("the").empty());
  CHECK(!g.recursive());
}

TEST_CASE("grammar errors") {
  CHECK_THROWS_AS(parse("%start S\nS -> A\nA -> A x\n"), GrammarError);
  CHECK_THROWS_AS(parse("%start S\nS -> a\nB -> b\n"), GrammarError);
  CHECK_THROWS_AS(parse("%start S\nT -> a\n"), GrammarError);
  CHECK_THROWS_AS(parse("%start S\nS ->\n"), GrammarError);
  CHECK_THROWS_AS(parse(""), GrammarError);
  CHECK_THROWS_AS(Grammar::load(kData + "/grammars/missing.cfg"), DataError);
}

TEST_CASE("recursive grammars respect the depth bound") {
  const auto g = parse("%start S\nS -> a | a S\n");
  CHECK(g.recursive());
  GenerateOptions o;
  o.max_depth = 400;
  const auto set = generate(g, 50, 3, o);
  CHECK(set.sentences.size() == 50);
  const auto deep = parse("%start S\nS -> a S S | a\n");
  GenerateOptions shallow;
  shallow.max_depth = 2;
  CHECK_THROWS_AS(generate(deep, 200, 1, shallow), GrammarError);
}

TEST_CASE("single production chain") {
  const auto g = parse("%start S\nS -> NP VP\nNP -> Sam\nVP -> runs\n");
  const auto set = generate(g, 10, 99);
  REQUIRE(set.sentences.size() == 10);
  for (const auto& s : set.sentences) CHECK(join(s.tokens) == "Sam runs");
  CHECK_THROWS_AS(generate(g, 0, 1), UsageError);
  GenerateOptions dedup;
  dedup.dedup = true;
  CHECK_THROWS_AS(generate(g, 2, 1, dedup), GrammarError);
}

TEST_CASE("generation is seeded") {
  const auto g = type_a();
  const auto x = generate(g, 50, 4), y = generate(g, 50, 4), z = generate(g, 50, 5);
  bool differs = false;
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(x.sentences[i].tokens == y.sentences[i].tokens);
    differs |= x.sentences[i].tokens != z.sentences[i].tokens;
  }
  CHECK(differs);
  CHECK(x.sentences[0].id == "cfg000000");
  CHECK(x.sentences[0].split == Split::kProbe);

  GenerateOptions dedup;
  dedup.dedup = true;
  const auto d = generate(g, 500, 1, dedup);
  std::set<std::string> seen;
  for (const auto& s : d.sentences) seen.insert(join(s.tokens));
  CHECK(seen.size() == 500);
}

TEST_CASE("shipped grammars") {
  const auto a = type_a(), b = type_b();
  CHECK(a.type() == SentenceType::kA);
  CHECK(b.type() == SentenceType::kB);
  // "Sam throws the rock" and "Sam beats John" are in the languages
  CHECK(a.rules().at("S").front() == Grammar::Alternative{"PropN", "VT_SG", "OBJ"});
  CHECK(has(a.lexicon().at("PropN").words, "Sam"));
  CHECK(has(a.lexicon().at("VT_SG").words, "throws"));
  CHECK(has(a.lexicon().at("InanN_SG").words, "rock"));
  CHECK(b.rules().at("S").front() == Grammar::Alternative{"PropN", "VB", "PropN"});
  CHECK(has(b.lexicon().at("PropN").words, "John"));
  CHECK(has(b.lexicon().at("VB").words, "beats"));
  CHECK(has(a.features_of("Sam"), "proper"));
  CHECK(has(a.features_of("rock"), "inanimate"));
  CHECK(has(b.features_of("John"), "proper"));
  CHECK(!b.features_of("beats").empty());

  // type A: proper-noun subject, verb, determiner, inanimate object
  for (const auto& s : generate(a, 300, 8).sentences) {
    REQUIRE(s.tokens.size() == 4);
    CHECK(has(a.features_of(s.tokens[0]), "proper"));
    CHECK(has(a.features_of(s.tokens[1]), "verb"));
    CHECK(s.tokens[2] == "the");
    CHECK(has(a.features_of(s.tokens[3]), "inanimate"));
  }
  // type B: two interchangeable proper nouns around a verb
  for (const auto& s : generate(b, 300, 8).sentences) {
    REQUIRE(s.tokens.size() == 3);
    CHECK(has(b.features_of(s.tokens[0]), "proper"));
    CHECK(has(b.features_of(s.tokens[2]), "proper"));
    CHECK(b.features_of(s.tokens[0]) == b.features_of(s.tokens[2]));
  }
}

TEST_CASE("evaluation harness") {
  const auto set = generate(type_a(), 40, 2);
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6};
  const Reconstructor echo = [](std::span<const Token> t) { return Tokens(t.begin(), t.end()); };
  const auto identity = evaluate_reordering(set, echo, seeds, false);
  CHECK(identity.mean_exact_match == 1.0);
  CHECK(identity.per_seed_accuracies.size() == 6);
  CHECK(identity.variance == 0.0);

  const Reconstructor never = [](std::span<const Token>) { return Tokens{"x"}; };
  CHECK(evaluate_reordering(set, never, seeds).mean_exact_match == 0.0);

  // the mean is the mean of per-seed values
  const auto scrambled = evaluate_reordering(set, echo, seeds);
  double sum = 0.0;
  for (double v : scrambled.per_seed_accuracies) sum += v;
  CHECK(scrambled.mean_exact_match == doctest::Approx(sum / 6.0));
  CHECK(scrambled.mean_exact_match < 0.5);

  CHECK_THROWS_AS(evaluate_reordering(set, echo, std::vector<std::uint64_t>{}), UsageError);
}

TEST_CASE("in-domain reorderer separates the two types") {
  const std::vector<Grammar> grammars{type_a(), type_b()};
  std::vector<GeneratedSet> eval{generate(grammars[0], 200, derive_seed(3, 0)),
                                 generate(grammars[1], 200, derive_seed(3, 1))};
  CfgReordererOptions o;
  o.sentences_per_grammar = 4000;
  const auto r = train_cfg_reorderer(grammars, eval, o);
  CHECK(r.train_sentences + r.heldout_sentences <= 8000);
  CHECK(r.heldout_sentences > 0);
  CHECK(r.model.temperature() == r.fit.temperature);

  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6};
  const auto a = evaluate_reordering(eval[0], r.model, seeds);
  const auto b = evaluate_reordering(eval[1], r.model, seeds);
  CHECK(a.mean_exact_match >= 0.85);
  CHECK(b.mean_exact_match > 0.3);
  CHECK(b.mean_exact_match < 0.7);

  // true order beats every subject/object swap on type A
  for (const auto& s : eval[0].sentences) {
    Tokens swapped{s.tokens[3], s.tokens[1], s.tokens[2], s.tokens[0]};
    CHECK(r.model.q_logp(s.tokens, s.tokens) > r.model.q_logp(swapped, s.tokens));
  }
}

TEST_CASE("type B argument orders tie under symmetric statistics") {
  const char* names[] = {"Ann", "Bo", "Cy", "Di", "Ed"};
  const char* verbs[] = {"sees", "calls", "helps"};
  std::vector<Tokens> corpus;
  for (const char* x : names)
    for (const char* v : verbs)
      for (const char* y : names) corpus.push_back(Tokens{x, v, y});
  const ReorderModel m(std::make_shared<const NgramModel>(NgramModel::train(corpus, {3, 1})), 0.7);
  for (const auto& s : corpus) {
    if (s[0] == s[2]) continue;
    const Tokens swapped{s[2], s[1], s[0]};
    CHECK(std::abs(m.q_logp(s, s) - m.q_logp(swapped, s)) < 1e-9);
    const auto d = m.decode(s);
    CHECK((d.tokens == s || d.tokens == swapped));
    CHECK(d.tokens[0] == std::min(s[0], s[2]));
  }
}
