#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wordorder/reorder.hpp"
#include "wordorder/textdata.hpp"

namespace wordorder {

class GrammarError : public DataError {
 public:
  using DataError::DataError;
};

/// Type A: argument roles are recoverable from agreement and animacy cues.
/// Type B: two interchangeable proper-noun arguments; only order tells them apart.
enum class SentenceType { kA, kB };

std::string_view to_string(SentenceType type);

struct LexicalCategory {
  std::string name;
  std::vector<std::string> features;
  std::vector<std::string> words;
};

/// Context-free grammar with a feature-annotated lexicon.
///
/// Text format, one statement per line, '#' starts a comment:
///
///     %start S
///     %type A
///     S -> SUBJ VERB OBJ | SUBJ VERB
///     OBJ -> the Noun
///     %lexicon
///     Noun [common inanimate sg] : rock ball
///
/// Symbols with rules are nonterminals, lexicon categories are preterminals
/// expanding to one of their words, anything else is a literal terminal.
class Grammar {
 public:
  using Alternative = std::vector<std::string>;

  static Grammar parse(std::istream& in);
  static Grammar load(const std::filesystem::path& path);

  const std::string& start() const { return start_; }
  std::optional<SentenceType> type() const { return type_; }
  const std::map<std::string, std::vector<Alternative>>& rules() const { return rules_; }
  const std::map<std::string, LexicalCategory>& lexicon() const { return lexicon_; }

  bool is_nonterminal(const std::string& symbol) const { return rules_.count(symbol) > 0; }
  bool is_category(const std::string& symbol) const { return lexicon_.count(symbol) > 0; }

  /// Features of every lexicon category listing `word`.
  std::vector<std::string> features_of(const std::string& word) const;
  bool recursive() const { return recursive_; }

 private:
  void validate();

  std::string start_;
  std::optional<SentenceType> type_;
  std::map<std::string, std::vector<Alternative>> rules_;
  std::map<std::string, LexicalCategory> lexicon_;
  bool recursive_ = false;
};

struct GenerateOptions {
  bool dedup = false;
  std::size_t max_depth = 32;
  std::string id_prefix = "cfg";
  std::string task = "cfg";
  Split split = Split::kProbe;
};

struct GeneratedSet {
  SentenceType type = SentenceType::kA;
  std::vector<SentenceRecord> sentences;
};

/// n derivations, alternatives and lexicon words chosen uniformly with
/// SplitMix64(seed).
GeneratedSet generate(const Grammar& grammar, std::size_t n, std::uint64_t seed,
                      const GenerateOptions& options = {});

struct AccuracyReport {
  SentenceType type = SentenceType::kA;
  double mean_exact_match = 0.0;
  std::vector<double> per_seed_accuracies;
  double variance = 0.0;  // sample variance of the per-seed accuracies
};

using Reconstructor = std::function<Tokens(std::span<const Token> scrambled)>;

/// Exact-match reordering accuracy per scramble seed. Each sentence is
/// scrambled with derive_seed(seed, index) unless scramble_inputs is false.
AccuracyReport evaluate_reordering(const GeneratedSet& set, const Reconstructor& reconstruct,
                                   std::span<const std::uint64_t> seeds, bool scramble_inputs = true);
AccuracyReport evaluate_reordering(const GeneratedSet& set, const ReorderModel& model,
                                   std::span<const std::uint64_t> seeds, std::size_t beam_width = 16);

struct CfgReordererOptions {
  std::size_t sentences_per_grammar = 20000;
  int order = 3;
  std::size_t min_count = 2;
  std::uint64_t seed = 7;
  TemperatureBounds bounds{};
};

struct CfgReorderer {
  ReorderModel model;
  TemperatureFit fit;
  std::size_t train_sentences = 0;
  std::size_t heldout_sentences = 0;
};

/// Trains the step LM on text generated from `grammars`, minus every sentence
/// of `exclude`, holding out 10% of the generated text to fit the temperature.
CfgReorderer train_cfg_reorderer(std::span<const Grammar> grammars,
                                 std::span<const GeneratedSet> exclude,
                                 const CfgReordererOptions& options = {});

}  // namespace wordorder
