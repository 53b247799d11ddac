#include "wordorder/infometrics.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace wordorder {

using nlohmann::json;

double avg_pmi(std::span<const double> pair_pmis) {
  if (pair_pmis.empty()) throw DataError("avg_pmi: no scrambles");
  double sum = 0.0;
  for (const double v : pair_pmis) sum += v;
  return sum / static_cast<double>(pair_pmis.size());
}

std::vector<PmiRecord> sentence_pmi(const SentenceRecord& sentence, std::span<const ScramblePair> scrambles,
                                    SentenceScorer& p, ConditionalScorer& q) {
  if (scrambles.empty()) throw DataError("sentence_pmi: no scrambles for '" + sentence.id + "'");
  const double p_bits = p.logp_sentence(sentence.tokens);
  std::vector<PmiRecord> out;
  std::vector<double> values;
  for (const auto& pair : scrambles) {
    const double q_bits = q.logp_cond(sentence.tokens, pair.scrambled);
    const double v = pmi(q_bits, p_bits);
    if (!std::isfinite(v)) throw DataError("non-finite pmi for '" + sentence.id + "'");
    out.push_back({sentence.id, pair.seed, v, sentence.tokens.size()});
    values.push_back(v);
  }
  out.push_back({sentence.id, std::nullopt, avg_pmi(values), sentence.tokens.size()});
  return out;
}

std::vector<PmiRecord> compute_pmi(std::span<const SentenceRecord> corpus,
                                   std::span<const ScramblePair> scrambles, SentenceScorer& p,
                                   ConditionalScorer& q) {
  std::unordered_map<std::string, std::vector<ScramblePair>> by_sentence;
  for (const auto& pair : scrambles) by_sentence[pair.sentence_id].push_back(pair);
  std::unordered_set<std::string> known;
  for (const auto& rec : corpus) known.insert(rec.id);
  for (const auto& [id, pairs] : by_sentence)
    if (!known.count(id)) throw DataError("scramble refers to unknown sentence '" + id + "'");
  std::vector<PmiRecord> out;
  for (const auto& rec : corpus) {
    const auto it = by_sentence.find(rec.id);
    if (it == by_sentence.end()) continue;
    auto rows = sentence_pmi(rec, it->second, p, q);
    out.insert(out.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
  }
  return out;
}

MiEstimate mi_bound(std::span<const double> pair_pmis) {
  if (pair_pmis.empty()) throw DataError("mi_bound: no pairs");
  MiEstimate est;
  est.n_pairs = pair_pmis.size();
  est.bound_bits = avg_pmi(pair_pmis);
  if (est.n_pairs > 1) {
    double ss = 0.0;
    for (const double v : pair_pmis) ss += (v - est.bound_bits) * (v - est.bound_bits);
    const double n = static_cast<double>(est.n_pairs);
    est.std_err = std::sqrt(ss / (n - 1.0) / n);
  }
  return est;
}

namespace {

double normalized_ld(std::size_t ld, std::size_t la, std::size_t lb, LdNormalization norm) {
  if (la == 0 && lb == 0) throw DataError("accuracy: both sequences are empty");
  const double d = static_cast<double>(ld);
  switch (norm) {
    case LdNormalization::kMaxLength:
      return d / static_cast<double>(std::max(la, lb));
    case LdNormalization::kMetric:
      return 2.0 * d / static_cast<double>(la + lb + ld);
  }
  return 0.0;
}

}  // namespace

double probe_accuracy(std::span<const Token> original, std::span<const Token> reconstructed,
                      const AccuracyOptions& options) {
  double norm;
  if (options.granularity == LdGranularity::kToken) {
    norm = normalized_ld(levenshtein(original, reconstructed), original.size(), reconstructed.size(),
                         options.normalization);
  } else {
    const std::string a = join(original), b = join(reconstructed);
    norm = normalized_ld(levenshtein(a, b), a.size(), b.size(), options.normalization);
  }
  return std::clamp(1.0 - norm, 0.0, 1.0);
}

double control_accuracy(std::span<const Token> original, std::span<const Token> scrambled,
                        const AccuracyOptions& options) {
  return probe_accuracy(original, scrambled, options);
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 3) throw DataError("correlation needs at least 3 records");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw DataError("correlation: degenerate (zero) variance");
  Correlation c;
  c.n = n;
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  if (n > 3 && std::abs(c.r) < 1.0) {
    const double z = std::atanh(c.r);
    const double half = 1.959963984540054 / std::sqrt(static_cast<double>(n) - 3.0);
    c.ci_low = std::tanh(z - half);
    c.ci_high = std::tanh(z + half);
  } else if (std::abs(c.r) == 1.0) {
    c.ci_low = c.ci_high = c.r;
  }
  return c;
}

Correlation length_pmi_correlation(std::span<const PmiRecord> records) {
  std::vector<double> len, val;
  for (const auto& r : records) {
    len.push_back(static_cast<double>(r.length));
    val.push_back(r.pmi_bits);
  }
  return pearson(len, val);
}

std::vector<HistogramBin> histogram(std::span<const double> values, std::size_t bins, double lo,
                                    double hi) {
  if (bins == 0 || !(hi > lo)) throw UsageError("histogram: invalid binning");
  std::vector<HistogramBin> out(bins);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    out[i].lo = lo + width * static_cast<double>(i);
    out[i].hi = i + 1 == bins ? hi : lo + width * static_cast<double>(i + 1);
  }
  for (const double v : values) {
    if (v < lo || v > hi) continue;
    auto idx = static_cast<std::size_t>((v - lo) / width);
    if (idx >= bins) idx = bins - 1;
    ++out[idx].count;
  }
  return out;
}

std::vector<PmiRecord> read_pmi_records(std::istream& in) {
  std::vector<PmiRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      PmiRecord r;
      r.sentence_id = j.at("sentence_id").get<std::string>();
      const auto& seed = j.at("seed");
      if (seed.is_string()) {
        if (seed.get<std::string>() != "avg") throw DataError("seed must be an integer or \"avg\"");
      } else {
        r.seed = seed.get<std::uint64_t>();
      }
      r.pmi_bits = j.at("pmi_bits").get<double>();
      r.length = j.at("length").get<std::size_t>();
      if (!std::isfinite(r.pmi_bits)) throw DataError("non-finite pmi");
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError("pmi file line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("pmi file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_pmi_records(std::ostream& out, std::span<const PmiRecord> records) {
  for (const auto& r : records) {
    json j;
    j["sentence_id"] = r.sentence_id;
    if (r.seed) j["seed"] = *r.seed;
    else j["seed"] = "avg";
    j["pmi_bits"] = r.pmi_bits;
    j["length"] = r.length;
    out << j.dump() << '\n';
  }
}

std::vector<ProbeScores> read_probe_scores(std::istream& in) {
  std::vector<ProbeScores> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("sentence_id").get<std::string>(), j.at("seed").get<std::uint64_t>(),
                     j.at("pa").get<double>(), j.at("ca").get<double>()});
    } catch (const json::exception& e) {
      throw DataError("probe file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_probe_scores(std::ostream& out, std::span<const ProbeScores> scores) {
  for (const auto& s : scores) {
    json j;
    j["sentence_id"] = s.sentence_id;
    j["seed"] = s.seed;
    j["pa"] = s.pa;
    j["ca"] = s.ca;
    out << j.dump() << '\n';
  }
}

}  // namespace wordorder
