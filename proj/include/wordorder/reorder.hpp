#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "wordorder/ngram.hpp"
#include "wordorder/textdata.hpp"

namespace wordorder {

class MultisetMismatch : public DataError {
 public:
  using DataError::DataError;
};

/// Token multiset. Iteration order is lexicographic by token.
class BagOfWords {
 public:
  BagOfWords() = default;
  explicit BagOfWords(std::span<const Token> tokens);

  std::size_t total() const { return total_; }
  std::size_t count(const Token& token) const;
  const std::map<Token, std::size_t>& counts() const { return counts_; }

  friend bool operator==(const BagOfWords&, const BagOfWords&) = default;

 private:
  std::map<Token, std::size_t> counts_;
  std::size_t total_ = 0;
};

struct Derivation {
  Tokens tokens;
  std::vector<double> step_logq;
  double logq = 0.0;
};

/// Per-step sufficient statistics of log2 q(s|t) for one sentence: at each
/// step the log2 multiplicities and step-LM scores of every remaining type,
/// plus which one was chosen. Lets the temperature objective be evaluated
/// without touching the LM again.
struct StepTable {
  struct Step {
    Eigen::VectorXd log_counts;
    Eigen::VectorXd scores;
    Eigen::Index chosen = 0;
  };
  std::vector<Step> steps;

  double logq(double temperature) const;
};

/// Sequential-selection distribution over orderings of a bag of words.
///
/// At each step the remaining type w is drawn with weight
/// count(w) * 2^(score(w | prefix) / temperature), where score is the step
/// LM's log2 probability of w after <s> + prefix. Each step is normalized over
/// the remaining types, so q sums to one over distinct orderings and depends
/// on the conditioning sentence only through its multiset.
class ReorderModel {
 public:
  explicit ReorderModel(std::shared_ptr<const NgramModel> step_lm, double temperature = 1.0);

  double temperature() const { return temperature_; }
  ReorderModel with_temperature(double temperature) const;
  const NgramModel& step_lm() const { return *step_lm_; }
  std::shared_ptr<const NgramModel> step_lm_ptr() const { return step_lm_; }

  /// log2 q(s | t). Throws MultisetMismatch when s is not a reordering of t.
  double q_logp(std::span<const Token> s, std::span<const Token> t) const;

  StepTable step_table(std::span<const Token> s) const;

  /// Beam search for the most probable ordering of t. Ties go to the
  /// lexicographically smaller token sequence.
  Derivation decode(std::span<const Token> t, std::size_t beam_width = 16) const;

  /// Temperature header followed by the step LM.
  void save(std::ostream& out) const;
  static ReorderModel load(std::istream& in);

 private:
  std::shared_ptr<const NgramModel> step_lm_;
  double temperature_;
};

/// One decoded scramble, as written to reconstruction files.
struct Reconstruction {
  std::string sentence_id;
  std::uint64_t seed = 0;
  Tokens tokens;
  double logq = 0.0;
};

std::vector<Reconstruction> read_reconstructions(std::istream& in);
void write_reconstructions(std::ostream& out, std::span<const Reconstruction> records);

struct TemperatureBounds {
  double lo = 0.05;
  double hi = 20.0;
};

struct TemperatureFit {
  double temperature = 1.0;
  double objective = 0.0;  // mean log2 q(s|t) at the returned temperature
};

/// Mean log2 q(s|t) over the pairs' step tables.
double temperature_objective(std::span<const StepTable> tables, double temperature);

/// Maximizes the mean log2 q(s|t) over temperature by golden-section search
/// on log temperature within the bounds; the bounds themselves are also
/// candidates and ties resolve toward the smaller temperature.
TemperatureFit fit_temperature(const ReorderModel& model,
                               std::span<const std::pair<Tokens, Tokens>> pairs,
                               const TemperatureBounds& bounds = {});
TemperatureFit fit_temperature(std::span<const StepTable> tables, const TemperatureBounds& bounds = {});

}  // namespace wordorder
