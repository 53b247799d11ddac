#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wordorder/error.hpp"

namespace wordorder {

using Token = std::string;
using Tokens = std::vector<Token>;

enum class Split { kTrain, kVal, kProbe };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct SentenceRecord {
  std::string id;
  std::string task = "generic";
  Tokens tokens;
  Split split = Split::kTrain;
};

struct ScramblePair {
  std::string sentence_id;
  std::uint64_t seed = 0;
  Tokens scrambled;
};

struct CorpusStats {
  std::string task;
  std::size_t n_sentences = 0;
  double avg_length = 0.0;
};

/// Whitespace split with every ASCII punctuation character detached as its
/// own token. Throws DataError on blank input.
Tokens tokenize(std::string_view text, bool lowercase = false);

std::string join(std::span<const Token> tokens, std::string_view sep = " ");

/// Fisher-Yates permutation of [0, n) driven by SplitMix64(seed). Position i
/// of the result is the source index placed at i.
std::vector<std::size_t> scramble_permutation(std::size_t n, std::uint64_t seed);

/// Uniform random reordering of `tokens`. The identity is a possible outcome.
Tokens scramble(std::span<const Token> tokens, std::uint64_t seed);

/// The default scramble seeds 1..k.
std::vector<std::uint64_t> default_seeds(std::size_t k = 6);

/// One ScramblePair per (sentence, seed), sentence-major.
std::vector<ScramblePair> make_scramble_set(std::span<const SentenceRecord> corpus,
                                            std::span<const std::uint64_t> seeds);

/// Mean token length for one task; "*" aggregates every task.
CorpusStats corpus_stats(std::span<const SentenceRecord> corpus, std::string_view task);
std::vector<CorpusStats> corpus_stats_by_task(std::span<const SentenceRecord> corpus);

// Sentence files: JSON lines {"id","task","split","text","tokens"} or TSV
// lines "id<TAB>task<TAB>split<TAB>text". Readers accept both per line.
std::vector<SentenceRecord> read_sentences(std::istream& in, bool lowercase = false);
void write_sentences(std::ostream& out, std::span<const SentenceRecord> records);

std::vector<ScramblePair> read_scrambles(std::istream& in);
void write_scrambles(std::ostream& out, std::span<const ScramblePair> pairs);

/// Rejects duplicate ids and empty token lists.
void validate_corpus(std::span<const SentenceRecord> corpus);

}  // namespace wordorder
