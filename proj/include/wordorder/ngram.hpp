#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wordorder/textdata.hpp"

namespace wordorder {

using WordId = std::uint32_t;

struct NgramOptions {
  int order = 3;
  /// Words seen fewer than this many times are mapped to <unk>.
  std::size_t min_count = 2;
};

/// Interpolated modified Kneser-Ney n-gram model. All scores are log base 2.
///
/// Sentences are padded with a single <s> and terminated by </s>. The
/// predicted support is every vocabulary word plus <unk> and </s>; <s> is
/// only ever a context. The model is immutable once built.
class NgramModel {
 public:
  static constexpr WordId kUnk = 0;
  static constexpr WordId kBos = 1;
  static constexpr WordId kEos = 2;
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kBosToken = "<s>";
  static constexpr std::string_view kEosToken = "</s>";

  static NgramModel train(std::span<const Tokens> corpus, const NgramOptions& options = {});

  int order() const { return order_; }
  std::size_t min_count() const { return min_count_; }

  /// Number of predictable symbols (vocabulary + <unk> + </s>).
  std::size_t support_size() const { return words_.size() - 1; }
  /// Predictable symbols in id order, <s> excluded.
  std::vector<std::string> support() const;

  WordId id(std::string_view token) const;
  const std::string& token(WordId id) const { return words_.at(id); }
  std::vector<WordId> ids(std::span<const Token> tokens) const;

  /// log2 P(word | last order-1 tokens of context). Unknown words score as <unk>.
  double logp_next(std::span<const Token> context, std::string_view word) const;
  double logp_next(std::span<const WordId> context, WordId word) const;

  /// Chain-rule score of <s> tokens </s>.
  double logp_sentence(std::span<const Token> tokens) const;

  /// Discounts {D1, D2, D3+} for n-grams of the given length (1-based).
  const std::array<double, 3>& discounts(int length) const { return discounts_.at(length - 1); }

  void save(std::ostream& out) const;
  static NgramModel load(std::istream& in);

 private:
  struct Context {
    double total = 0.0;   // sum of adjusted counts of continuations
    double backoff = 0.0; // interpolation weight toward the shorter context
  };

  static std::uint64_t key(std::uint32_t node, WordId w) {
    return (static_cast<std::uint64_t>(node) << 32) | w;
  }

  void index_counts(const std::vector<std::vector<std::pair<std::vector<WordId>, double>>>& levels);

  int order_ = 3;
  std::size_t min_count_ = 2;
  std::vector<std::string> words_;
  std::unordered_map<std::string, WordId> word_ids_;
  std::vector<std::array<double, 3>> discounts_;
  // Adjusted counts per length, sorted; kept for serialization.
  std::vector<std::vector<std::pair<std::vector<WordId>, double>>> levels_;
  // Contexts form a trie read right to left: the child of node h under word
  // v is the context "v h". Node 0 is the empty context.
  std::vector<Context> contexts_;
  std::vector<int> context_depth_;
  std::unordered_map<std::uint64_t, std::uint32_t> children_;
  std::unordered_map<std::uint64_t, double> counts_;
};

}  // namespace wordorder
