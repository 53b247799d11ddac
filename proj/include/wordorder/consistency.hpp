#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wordorder/infometrics.hpp"

namespace wordorder {

/// External classifier output for one sample: the prediction on the original
/// input and on each scrambled copy, keyed by scramble seed.
struct PredictionRecord {
  std::string task;
  std::string sample_id;
  std::string gold;
  std::string pred_original;
  std::map<std::uint64_t, std::string> preds_scrambled;
};

/// One regression row. y = 1 iff the scrambled prediction agrees with the
/// original one (majority over seeds in averaged mode).
struct ConsistencyRecord {
  std::string task;
  std::string sample_id;
  int y = 0;
  double avg_pmi_bits = 0.0;
  double length = 0.0;
  std::optional<std::uint64_t> seed;  // set in per-seed mode
};

enum class Granularity { kPerSeed, kAveraged };

/// How PMI is combined for samples made of several sentences ("id#0",
/// "id#1", ...): mean over parts, or only the first / last part.
enum class PairMode { kAverage, kFirst, kLast };

struct BuildOptions {
  Granularity granularity = Granularity::kAveraged;
  PairMode pair_mode = PairMode::kAverage;
};

class MissingJoinError : public DataError {
 public:
  explicit MissingJoinError(std::vector<std::string> ids);
  const std::vector<std::string>& unmatched() const { return ids_; }

 private:
  std::vector<std::string> ids_;
};

/// Drops samples whose original prediction is wrong, then joins the rest with
/// their PMI records. A sample matches PMI rows whose sentence_id is the
/// sample id itself or "<sample_id>#<part>".
std::vector<ConsistencyRecord> build_dataset(std::span<const PredictionRecord> predictions,
                                             std::span<const PmiRecord> pmi_records,
                                             const BuildOptions& options = {});

/// A classifier input with its gold label and label set.
struct LabeledSample {
  std::string task;
  std::string sample_id;
  std::string gold;
  std::vector<std::string> labels;
  Tokens tokens;
};

/// Asks `classifier` for the original sample and for every scramble whose
/// sentence_id is the sample id.
std::vector<PredictionRecord> collect_predictions(std::span<const LabeledSample> samples,
                                                  std::span<const ScramblePair> scrambles, Classifier& classifier);

/// JSON lines {task, sample_id, gold, labels, tokens | text}.
std::vector<LabeledSample> read_labeled_samples(std::istream& in);

std::vector<PredictionRecord> read_predictions(std::istream& in);
void write_predictions(std::ostream& out, std::span<const PredictionRecord> records);

/// CSV with header task,sample_id,y,avg_pmi_bits,length.
std::vector<ConsistencyRecord> read_consistency_csv(std::istream& in);
void write_consistency_csv(std::ostream& out, std::span<const ConsistencyRecord> records);

Granularity parse_granularity(std::string_view name);
PairMode parse_pair_mode(std::string_view name);

}  // namespace wordorder
