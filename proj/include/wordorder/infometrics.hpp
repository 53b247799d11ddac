#pragma once

#include <algorithm>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wordorder/providers.hpp"
#include "wordorder/textdata.hpp"

namespace wordorder {

/// Per-pair (seed set) or per-sentence average (seed empty) PMI in bits.
struct PmiRecord {
  std::string sentence_id;
  std::optional<std::uint64_t> seed;
  double pmi_bits = 0.0;
  std::size_t length = 0;
};

/// Sample-mean lower bound on I(S;T) with its Monte-Carlo standard error.
/// The bound is loose by the expected KL(p(s|t) || q(s|t)), which is not
/// estimated.
struct MiEstimate {
  std::size_t n_pairs = 0;
  double bound_bits = 0.0;
  double std_err = 0.0;
};

struct ProbeScores {
  std::string sentence_id;
  std::uint64_t seed = 0;
  double pa = 0.0;
  double ca = 0.0;
};

enum class LdNormalization {
  kMaxLength,  // LD / max(|a|, |b|)
  kMetric,     // 2 LD / (|a| + |b| + LD)
};

enum class LdGranularity { kToken, kCharacter };

struct AccuracyOptions {
  LdNormalization normalization = LdNormalization::kMaxLength;
  LdGranularity granularity = LdGranularity::kToken;
};

struct Correlation {
  std::size_t n = 0;
  double r = 0.0;
  double ci_low = -1.0;
  double ci_high = 1.0;
};

inline double pmi(double q_bits, double p_bits) { return q_bits - p_bits; }

/// Arithmetic mean of per-scramble PMI values.
double avg_pmi(std::span<const double> pair_pmis);

/// Scores every scramble of one sentence and returns the per-pair records
/// followed by the sentence's average record.
std::vector<PmiRecord> sentence_pmi(const SentenceRecord& sentence, std::span<const ScramblePair> scrambles,
                                    SentenceScorer& p, ConditionalScorer& q);

/// sentence_pmi over a corpus, in corpus order. Sentences without scrambles
/// produce no rows; scrambles of unknown sentences are a DataError.
std::vector<PmiRecord> compute_pmi(std::span<const SentenceRecord> corpus,
                                   std::span<const ScramblePair> scrambles, SentenceScorer& p,
                                   ConditionalScorer& q);

MiEstimate mi_bound(std::span<const double> pair_pmis);

/// Unit-cost insert/delete/substitute edit distance over any random-access
/// sequences with equality-comparable elements.
template <class SeqA, class SeqB>
std::size_t levenshtein(const SeqA& a, const SeqB& b) {
  const std::size_t n = std::size(a), m = std::size(b);
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// 1 - norm(LD(original, reconstruction)), clamped to [0, 1].
double probe_accuracy(std::span<const Token> original, std::span<const Token> reconstructed,
                      const AccuracyOptions& options = {});

/// probe_accuracy with the scrambled sentence standing in for the reconstruction.
double control_accuracy(std::span<const Token> original, std::span<const Token> scrambled,
                        const AccuracyOptions& options = {});

/// Pearson correlation of length against PMI with a Fisher-z 95% interval.
Correlation length_pmi_correlation(std::span<const PmiRecord> records);
Correlation pearson(std::span<const double> x, std::span<const double> y);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

/// Equal-width bins over [lo, hi]; the last bin is closed on the right.
std::vector<HistogramBin> histogram(std::span<const double> values, std::size_t bins, double lo = 0.0,
                                    double hi = 1.0);

std::vector<PmiRecord> read_pmi_records(std::istream& in);
void write_pmi_records(std::ostream& out, std::span<const PmiRecord> records);
std::vector<ProbeScores> read_probe_scores(std::istream& in);
void write_probe_scores(std::ostream& out, std::span<const ProbeScores> scores);

}  // namespace wordorder
