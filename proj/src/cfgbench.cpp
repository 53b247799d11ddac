#include "wordorder/cfgbench.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "wordorder/random.hpp"

namespace wordorder {

std::string_view to_string(SentenceType type) { return type == SentenceType::kA ? "A" : "B"; }

namespace {

std::vector<std::string> words_of(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Grammar Grammar::parse(std::istream& in) {
  Grammar g;
  bool in_lexicon = false;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw GrammarError("grammar line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = strip(line);
    if (line.empty()) continue;
    if (line.front() == '%') {
      const auto parts = words_of(line);
      if (parts[0] == "%start" && parts.size() == 2) {
        g.start_ = parts[1];
      } else if (parts[0] == "%type" && parts.size() == 2) {
        if (parts[1] == "A") g.type_ = SentenceType::kA;
        else if (parts[1] == "B") g.type_ = SentenceType::kB;
        else fail("type must be A or B");
      } else if (parts[0] == "%lexicon" && parts.size() == 1) {
        in_lexicon = true;
      } else {
        fail("unknown directive '" + parts[0] + "'");
      }
      continue;
    }
    if (in_lexicon) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) fail("lexicon entry needs 'Category [features] : words'");
      std::string head = strip(line.substr(0, colon));
      LexicalCategory cat;
      if (const auto open = head.find('['); open != std::string::npos) {
        const auto close = head.find(']', open);
        if (close == std::string::npos) fail("unterminated feature list");
        cat.features = words_of(head.substr(open + 1, close - open - 1));
        head = strip(head.substr(0, open));
      }
      const auto name = words_of(head);
      if (name.size() != 1) fail("lexicon category must be a single symbol");
      cat.name = name[0];
      cat.words = words_of(line.substr(colon + 1));
      if (cat.words.empty()) fail("lexicon category '" + cat.name + "' lists no words");
      auto& slot = g.lexicon_[cat.name];
      if (slot.name.empty()) {
        slot = std::move(cat);
      } else {
        slot.words.insert(slot.words.end(), cat.words.begin(), cat.words.end());
      }
      continue;
    }
    const auto arrow = line.find("->");
    if (arrow == std::string::npos) fail("expected 'NT -> symbols | symbols'");
    const auto lhs = words_of(line.substr(0, arrow));
    if (lhs.size() != 1) fail("rule left-hand side must be a single symbol");
    if (g.start_.empty()) g.start_ = lhs[0];
    auto& alts = g.rules_[lhs[0]];
    std::string rest = line.substr(arrow + 2);
    std::size_t pos = 0;
    for (;;) {
      const auto bar = rest.find('|', pos);
      auto alt = words_of(rest.substr(pos, bar == std::string::npos ? std::string::npos : bar - pos));
      if (alt.empty()) fail("empty alternative for '" + lhs[0] + "'");
      alts.push_back(std::move(alt));
      if (bar == std::string::npos) break;
      pos = bar + 1;
    }
  }
  g.validate();
  return g;
}

Grammar Grammar::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open grammar file " + path.string());
  return parse(in);
}

void Grammar::validate() {
  if (rules_.empty()) throw GrammarError("grammar has no rules");
  if (!rules_.count(start_)) throw GrammarError("start symbol '" + start_ + "' has no rules");
  for (const auto& [name, cat] : lexicon_)
    if (rules_.count(name)) throw GrammarError("'" + name + "' is both a nonterminal and a lexicon category");

  std::set<std::string> productive;
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& [nt, alts] : rules_) {
      if (productive.count(nt)) continue;
      for (const auto& alt : alts) {
        const bool ok = std::all_of(alt.begin(), alt.end(), [&](const std::string& s) {
          return !rules_.count(s) || productive.count(s);
        });
        if (ok) {
          productive.insert(nt);
          changed = true;
          break;
        }
      }
    }
  }
  for (const auto& [nt, alts] : rules_)
    if (!productive.count(nt)) throw GrammarError("unproductive grammar: '" + nt + "' derives no sentence");

  std::set<std::string> reached{start_};
  std::vector<std::string> stack{start_};
  while (!stack.empty()) {
    const auto nt = stack.back();
    stack.pop_back();
    for (const auto& alt : rules_.at(nt))
      for (const auto& s : alt)
        if (rules_.count(s) && reached.insert(s).second) stack.push_back(s);
  }
  for (const auto& [nt, alts] : rules_)
    if (!reached.count(nt)) throw GrammarError("nonterminal '" + nt + "' is unreachable from '" + start_ + "'");

  // Recursion: some nonterminal reaches itself.
  recursive_ = false;
  for (const auto& [root, unused] : rules_) {
    std::set<std::string> seen;
    std::vector<std::string> todo{root};
    while (!todo.empty() && !recursive_) {
      const auto nt = todo.back();
      todo.pop_back();
      for (const auto& alt : rules_.at(nt))
        for (const auto& s : alt) {
          if (s == root) recursive_ = true;
          if (rules_.count(s) && seen.insert(s).second) todo.push_back(s);
        }
    }
    if (recursive_) break;
  }
}

std::vector<std::string> Grammar::features_of(const std::string& word) const {
  std::vector<std::string> out;
  for (const auto& [name, cat] : lexicon_)
    if (std::find(cat.words.begin(), cat.words.end(), word) != cat.words.end())
      out.insert(out.end(), cat.features.begin(), cat.features.end());
  return out;
}

GeneratedSet generate(const Grammar& grammar, std::size_t n, std::uint64_t seed,
                      const GenerateOptions& options) {
  if (n < 1) throw UsageError("generate: n must be at least 1");
  SplitMix64 rng(seed);
  std::function<void(const std::string&, std::size_t, Tokens&)> expand =
      [&](const std::string& symbol, std::size_t depth, Tokens& out) {
        if (const auto r = grammar.rules().find(symbol); r != grammar.rules().end()) {
          if (depth >= options.max_depth)
            throw GrammarError("derivation exceeded max depth " + std::to_string(options.max_depth));
          const auto& alts = r->second;
          const auto& alt = alts[rng.uniform(alts.size())];
          for (const auto& s : alt) expand(s, depth + 1, out);
        } else if (const auto c = grammar.lexicon().find(symbol); c != grammar.lexicon().end()) {
          const auto& words = c->second.words;
          out.push_back(words[rng.uniform(words.size())]);
        } else {
          out.push_back(symbol);
        }
      };

  GeneratedSet set;
  set.type = grammar.type().value_or(SentenceType::kA);
  std::unordered_set<std::string> seen;
  const std::size_t max_attempts = options.dedup ? n * 1000 : n;
  for (std::size_t attempt = 0; set.sentences.size() < n; ++attempt) {
    if (attempt >= max_attempts)
      throw GrammarError("generate: could not draw " + std::to_string(n) + " distinct sentences");
    Tokens tokens;
    expand(grammar.start(), 0, tokens);
    if (options.dedup && !seen.insert(join(tokens)).second) continue;
    SentenceRecord rec;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu", set.sentences.size());
    rec.id = options.id_prefix + buf;
    rec.task = options.task;
    rec.split = options.split;
    rec.tokens = std::move(tokens);
    set.sentences.push_back(std::move(rec));
  }
  return set;
}

AccuracyReport evaluate_reordering(const GeneratedSet& set, const Reconstructor& reconstruct,
                                   std::span<const std::uint64_t> seeds, bool scramble_inputs) {
  if (seeds.empty()) throw UsageError("evaluate_reordering: no seeds");
  if (set.sentences.empty()) throw DataError("evaluate_reordering: empty sentence set");
  AccuracyReport report;
  report.type = set.type;
  for (const auto seed : seeds) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < set.sentences.size(); ++i) {
      const auto& original = set.sentences[i].tokens;
      const Tokens input = scramble_inputs ? scramble(original, derive_seed(seed, i)) : original;
      if (reconstruct(input) == original) ++hits;
    }
    report.per_seed_accuracies.push_back(static_cast<double>(hits) /
                                         static_cast<double>(set.sentences.size()));
  }
  const double k = static_cast<double>(seeds.size());
  double sum = 0.0;
  for (const double a : report.per_seed_accuracies) sum += a;
  report.mean_exact_match = sum / k;
  if (seeds.size() > 1) {
    double ss = 0.0;
    for (const double a : report.per_seed_accuracies)
      ss += (a - report.mean_exact_match) * (a - report.mean_exact_match);
    report.variance = ss / (k - 1.0);
  }
  return report;
}

AccuracyReport evaluate_reordering(const GeneratedSet& set, const ReorderModel& model,
                                   std::span<const std::uint64_t> seeds, std::size_t beam_width) {
  return evaluate_reordering(
      set, [&](std::span<const Token> t) { return model.decode(t, beam_width).tokens; }, seeds, true);
}

CfgReorderer train_cfg_reorderer(std::span<const Grammar> grammars, std::span<const GeneratedSet> exclude,
                                 const CfgReordererOptions& options) {
  if (grammars.empty()) throw UsageError("train_cfg_reorderer: no grammars");
  std::unordered_set<std::string> excluded;
  for (const auto& set : exclude)
    for (const auto& rec : set.sentences) excluded.insert(join(rec.tokens));

  std::vector<Tokens> train, heldout;
  for (std::size_t g = 0; g < grammars.size(); ++g) {
    GenerateOptions gen;
    gen.id_prefix = "train";
    const auto set = generate(grammars[g], options.sentences_per_grammar, derive_seed(options.seed, g), gen);
    for (std::size_t i = 0; i < set.sentences.size(); ++i) {
      const auto& tokens = set.sentences[i].tokens;
      if (excluded.count(join(tokens))) continue;
      (i % 10 == 9 ? heldout : train).push_back(tokens);
    }
  }
  NgramOptions lm_options;
  lm_options.order = options.order;
  lm_options.min_count = options.min_count;
  auto lm = std::make_shared<const NgramModel>(NgramModel::train(train, lm_options));
  ReorderModel model(lm, 1.0);

  std::vector<StepTable> tables;
  tables.reserve(heldout.size());
  for (const auto& s : heldout) tables.push_back(model.step_table(s));
  const auto fit = fit_temperature(tables, options.bounds);
  return {model.with_temperature(fit.temperature), fit, train.size(), heldout.size()};
}

}  // namespace wordorder
