#include "wordorder/consistency.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace wordorder {

using nlohmann::json;

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < 20; ++i) out += (i ? ", " : "") + ids[i];
  if (ids.size() > 20) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

struct SentencePmi {
  std::size_t length = 0;
  std::map<std::uint64_t, double> by_seed;
  std::optional<double> avg;
};

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

MissingJoinError::MissingJoinError(std::vector<std::string> ids)
    : DataError("no PMI records for: " + join_ids(ids)), ids_(std::move(ids)) {}

Granularity parse_granularity(std::string_view name) {
  if (name == "per_seed" || name == "per-seed") return Granularity::kPerSeed;
  if (name == "averaged") return Granularity::kAveraged;
  throw UsageError("unknown granularity '" + std::string(name) + "'");
}

PairMode parse_pair_mode(std::string_view name) {
  if (name == "average") return PairMode::kAverage;
  if (name == "first") return PairMode::kFirst;
  if (name == "last") return PairMode::kLast;
  throw UsageError("unknown pair mode '" + std::string(name) + "'");
}

std::vector<ConsistencyRecord> build_dataset(std::span<const PredictionRecord> predictions,
                                             std::span<const PmiRecord> pmi_records,
                                             const BuildOptions& options) {
  // sample id -> parts in order of first appearance
  std::unordered_map<std::string, std::vector<std::string>> parts_of;
  std::unordered_map<std::string, SentencePmi> by_sentence;
  for (const auto& r : pmi_records) {
    auto& s = by_sentence[r.sentence_id];
    if (s.by_seed.empty() && !s.avg) {
      const auto hash = r.sentence_id.find('#');
      parts_of[r.sentence_id.substr(0, hash)].push_back(r.sentence_id);
    }
    s.length = r.length;
    if (r.seed) s.by_seed[*r.seed] = r.pmi_bits;
    else s.avg = r.pmi_bits;
  }

  std::vector<ConsistencyRecord> out;
  std::vector<std::string> missing;
  for (const auto& pred : predictions) {
    if (pred.pred_original != pred.gold) continue;
    if (pred.preds_scrambled.empty()) throw DataError("sample '" + pred.sample_id + "' has no scrambled predictions");
    const auto it = parts_of.find(pred.sample_id);
    if (it == parts_of.end()) {
      missing.push_back(pred.sample_id);
      continue;
    }
    std::vector<const SentencePmi*> parts;
    for (const auto& id : it->second) parts.push_back(&by_sentence.at(id));
    if (options.pair_mode == PairMode::kFirst) parts.resize(1);
    if (options.pair_mode == PairMode::kLast) parts.erase(parts.begin(), parts.end() - 1);

    double length = 0.0;
    for (const auto* p : parts) length += static_cast<double>(p->length);
    length /= static_cast<double>(parts.size());

    auto seed_pmi = [&](std::uint64_t seed) -> std::optional<double> {
      double sum = 0.0;
      for (const auto* p : parts) {
        const auto s = p->by_seed.find(seed);
        if (s == p->by_seed.end()) return std::nullopt;
        sum += s->second;
      }
      return sum / static_cast<double>(parts.size());
    };

    if (options.granularity == Granularity::kPerSeed) {
      for (const auto& [seed, label] : pred.preds_scrambled) {
        const auto v = seed_pmi(seed);
        if (!v) {
          missing.push_back(pred.sample_id + "@" + std::to_string(seed));
          continue;
        }
        out.push_back({pred.task, pred.sample_id, label == pred.pred_original ? 1 : 0, *v, length, seed});
      }
    } else {
      std::size_t agree = 0;
      double sum = 0.0;
      bool complete = true;
      for (const auto& [seed, label] : pred.preds_scrambled) {
        if (label == pred.pred_original) ++agree;
        const auto v = seed_pmi(seed);
        if (v) sum += *v;
        else complete = false;
      }
      std::optional<double> value;
      if (complete) {
        value = sum / static_cast<double>(pred.preds_scrambled.size());
      } else if (std::all_of(parts.begin(), parts.end(), [](const SentencePmi* p) { return p->avg.has_value(); })) {
        double avg_sum = 0.0;
        for (const auto* p : parts) avg_sum += *p->avg;
        value = avg_sum / static_cast<double>(parts.size());
      }
      if (!value) {
        missing.push_back(pred.sample_id);
        continue;
      }
      // Strict majority; a tie counts as inconsistent.
      const int y = 2 * agree > pred.preds_scrambled.size() ? 1 : 0;
      out.push_back({pred.task, pred.sample_id, y, *value, length, std::nullopt});
    }
  }
  if (!missing.empty()) throw MissingJoinError(std::move(missing));
  return out;
}

std::vector<PredictionRecord> read_predictions(std::istream& in) {
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      PredictionRecord r;
      r.task = j.at("task").get<std::string>();
      r.sample_id = j.at("sample_id").get<std::string>();
      r.gold = j.at("gold").get<std::string>();
      r.pred_original = j.at("pred_original").get<std::string>();
      for (const auto& [key, value] : j.at("preds_scrambled").items()) {
        std::size_t used = 0;
        const auto seed = std::stoull(key, &used);
        if (used != key.size()) throw DataError("bad seed key '" + key + "'");
        r.preds_scrambled[seed] = value.get<std::string>();
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError("prediction file line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::logic_error& e) {
      throw DataError("prediction file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_predictions(std::ostream& out, std::span<const PredictionRecord> records) {
  for (const auto& r : records) {
    json j;
    j["task"] = r.task;
    j["sample_id"] = r.sample_id;
    j["gold"] = r.gold;
    j["pred_original"] = r.pred_original;
    json preds = json::object();
    for (const auto& [seed, label] : r.preds_scrambled) preds[std::to_string(seed)] = label;
    j["preds_scrambled"] = preds;
    out << j.dump() << '\n';
  }
}

std::vector<PredictionRecord> collect_predictions(std::span<const LabeledSample> samples,
                                                  std::span<const ScramblePair> scrambles, Classifier& classifier) {
  std::unordered_map<std::string, std::vector<const ScramblePair*>> by_id;
  for (const auto& p : scrambles) by_id[p.sentence_id].push_back(&p);
  std::vector<PredictionRecord> out;
  for (const auto& s : samples) {
    if (s.labels.empty()) throw DataError("sample " + s.sample_id + " has no label set");
    auto it = by_id.find(s.sample_id);
    if (it == by_id.end()) throw MissingJoinError({s.sample_id});
    PredictionRecord r{s.task, s.sample_id, s.gold, classifier.classify(s.tokens, s.labels), {}};
    for (const auto* p : it->second) r.preds_scrambled[p->seed] = classifier.classify(p->scrambled, s.labels);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<LabeledSample> read_labeled_samples(std::istream& in) {
  std::vector<LabeledSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      LabeledSample s;
      s.task = j.at("task").get<std::string>();
      s.sample_id = j.at("sample_id").get<std::string>();
      s.gold = j.at("gold").get<std::string>();
      s.labels = j.at("labels").get<std::vector<std::string>>();
      s.tokens = j.contains("tokens") ? j["tokens"].get<Tokens>() : tokenize(j.at("text").get<std::string>());
      if (s.tokens.empty()) throw DataError("empty tokens");
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError("sample file line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("sample file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<ConsistencyRecord> read_consistency_csv(std::istream& in) {
  std::vector<ConsistencyRecord> out;
  std::string line;
  if (!std::getline(in, line)) throw DataError("consistency file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "task,sample_id,y,avg_pmi_bits,length")
    throw DataError("consistency file: unexpected header '" + line + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw DataError("consistency file line " + std::to_string(lineno) + ": expected 5 fields");
    ConsistencyRecord r;
    r.task = f[0];
    r.sample_id = f[1];
    try {
      r.y = std::stoi(f[2]);
      r.avg_pmi_bits = std::stod(f[3]);
      r.length = std::stod(f[4]);
    } catch (const std::logic_error&) {
      throw DataError("consistency file line " + std::to_string(lineno) + ": bad number");
    }
    if (r.y != 0 && r.y != 1) throw DataError("consistency file line " + std::to_string(lineno) + ": y must be 0 or 1");
    out.push_back(std::move(r));
  }
  return out;
}

void write_consistency_csv(std::ostream& out, std::span<const ConsistencyRecord> records) {
  out << "task,sample_id,y,avg_pmi_bits,length\n";
  for (const auto& r : records) {
    out << r.task << ',' << r.sample_id << ',' << r.y << ',' << format_number(r.avg_pmi_bits) << ','
        << format_number(r.length) << '\n';
  }
}

}  // namespace wordorder
