#include "wordorder/reorder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "json.hpp"

namespace wordorder {

namespace {

// log2 sum_i 2^v_i
double log2_sum_exp2(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  return m + std::log2((v.array() - m).unaryExpr([](double x) { return std::exp2(x); }).sum());
}

}  // namespace

BagOfWords::BagOfWords(std::span<const Token> tokens) : total_(tokens.size()) {
  for (const auto& t : tokens) ++counts_[t];
}

std::size_t BagOfWords::count(const Token& token) const {
  const auto it = counts_.find(token);
  return it == counts_.end() ? 0 : it->second;
}

double StepTable::logq(double temperature) const {
  double total = 0.0;
  for (const auto& step : steps) {
    const Eigen::VectorXd w = step.log_counts + step.scores / temperature;
    total += w[step.chosen] - log2_sum_exp2(w);
  }
  return total;
}

ReorderModel::ReorderModel(std::shared_ptr<const NgramModel> step_lm, double temperature)
    : step_lm_(std::move(step_lm)), temperature_(temperature) {
  if (!step_lm_) throw UsageError("reorder model needs a step language model");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw UsageError("reorder temperature must be finite and positive");
}

ReorderModel ReorderModel::with_temperature(double temperature) const {
  return ReorderModel(step_lm_, temperature);
}

void ReorderModel::save(std::ostream& out) const {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", temperature_);
  out << "wordorder-reorder 1\ntemperature " << buf << "\n";
  step_lm_->save(out);
}

ReorderModel ReorderModel::load(std::istream& in) {
  std::string magic, key, value;
  int version = 0;
  if (!(in >> magic >> version) || magic != "wordorder-reorder" || version != 1)
    throw DataError("reorder model: bad header");
  if (!(in >> key >> value) || key != "temperature") throw DataError("reorder model: missing temperature");
  char* end = nullptr;
  const double t = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0') throw DataError("reorder model: bad temperature " + value);
  auto lm = std::make_shared<const NgramModel>(NgramModel::load(in));
  return ReorderModel(std::move(lm), t);
}

StepTable ReorderModel::step_table(std::span<const Token> s) const {
  const BagOfWords bag(s);
  std::vector<Token> types;
  std::vector<std::size_t> remaining;
  std::vector<WordId> type_ids;
  for (const auto& [tok, n] : bag.counts()) {
    types.push_back(tok);
    remaining.push_back(n);
    type_ids.push_back(step_lm_->id(tok));
  }
  std::size_t live = types.size();

  StepTable table;
  std::vector<WordId> context{NgramModel::kBos};
  context.reserve(s.size() + 1);
  for (const auto& tok : s) {
    if (live <= 1) break;  // the rest of the ordering is forced
    StepTable::Step step;
    step.log_counts.resize(static_cast<Eigen::Index>(live));
    step.scores.resize(static_cast<Eigen::Index>(live));
    Eigen::Index slot = 0;
    std::size_t chosen_type = 0;
    for (std::size_t j = 0; j < types.size(); ++j) {
      if (remaining[j] == 0) continue;
      if (types[j] == tok) {
        step.chosen = slot;
        chosen_type = j;
      }
      step.log_counts[slot] = std::log2(static_cast<double>(remaining[j]));
      step.scores[slot] = step_lm_->logp_next(context, type_ids[j]);
      ++slot;
    }
    table.steps.push_back(std::move(step));
    if (--remaining[chosen_type] == 0) --live;
    context.push_back(type_ids[chosen_type]);
  }
  return table;
}

double ReorderModel::q_logp(std::span<const Token> s, std::span<const Token> t) const {
  if (BagOfWords(s) != BagOfWords(t))
    throw MultisetMismatch("q_logp: '" + join(s) + "' is not a reordering of '" + join(t) + "'");
  return step_table(s).logq(temperature_);
}

Derivation ReorderModel::decode(std::span<const Token> t, std::size_t beam_width) const {
  if (beam_width < 1) throw UsageError("beam width must be at least 1");
  if (t.empty()) return {};
  const BagOfWords bag(t);
  std::vector<Token> types;
  std::vector<WordId> type_ids;
  std::vector<std::size_t> initial;
  for (const auto& [tok, n] : bag.counts()) {
    types.push_back(tok);
    type_ids.push_back(step_lm_->id(tok));
    initial.push_back(n);
  }

  struct Hyp {
    std::vector<std::size_t> seq;  // indices into types; types are sorted, so
                                   // comparing seq compares token sequences
    std::vector<std::size_t> remaining;
    std::vector<WordId> context;
    std::vector<double> steps;
    double logq = 0.0;
  };
  std::vector<Hyp> beam(1);
  beam[0].remaining = initial;
  beam[0].context = {NgramModel::kBos};

  Eigen::VectorXd w(static_cast<Eigen::Index>(types.size()));
  for (std::size_t pos = 0; pos < t.size(); ++pos) {
    std::vector<Hyp> next;
    for (const auto& h : beam) {
      std::vector<std::size_t> live;
      for (std::size_t j = 0; j < types.size(); ++j)
        if (h.remaining[j] > 0) live.push_back(j);
      w.resize(static_cast<Eigen::Index>(live.size()));
      for (std::size_t k = 0; k < live.size(); ++k) {
        const auto j = live[k];
        w[static_cast<Eigen::Index>(k)] =
            live.size() == 1 ? 0.0
                             : std::log2(static_cast<double>(h.remaining[j])) +
                                   step_lm_->logp_next(h.context, type_ids[j]) / temperature_;
      }
      const double norm = log2_sum_exp2(w);
      for (std::size_t k = 0; k < live.size(); ++k) {
        const auto j = live[k];
        Hyp child = h;
        const double step = w[static_cast<Eigen::Index>(k)] - norm;
        child.seq.push_back(j);
        --child.remaining[j];
        child.context.push_back(type_ids[j]);
        child.steps.push_back(step);
        child.logq += step;
        next.push_back(std::move(child));
      }
    }
    std::sort(next.begin(), next.end(), [](const Hyp& a, const Hyp& b) {
      if (a.logq != b.logq) return a.logq > b.logq;
      return a.seq < b.seq;
    });
    if (next.size() > beam_width) next.resize(beam_width);
    beam = std::move(next);
  }

  const Hyp& best = beam.front();
  Derivation d;
  for (const auto j : best.seq) d.tokens.push_back(types[j]);
  d.step_logq = best.steps;
  d.logq = best.logq;
  return d;
}

double temperature_objective(std::span<const StepTable> tables, double temperature) {
  double total = 0.0;
  for (const auto& t : tables) total += t.logq(temperature);
  return total / static_cast<double>(tables.size());
}

TemperatureFit fit_temperature(std::span<const StepTable> tables, const TemperatureBounds& bounds) {
  if (tables.empty()) throw DataError("fit_temperature: no held-out pairs");
  if (!(bounds.lo > 0.0) || !(bounds.hi >= bounds.lo) || !std::isfinite(bounds.hi))
    throw UsageError("fit_temperature: invalid bounds");
  auto f = [&](double u) { return temperature_objective(tables, std::exp(u)); };

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(bounds.lo), b = std::log(bounds.hi);
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && b - a > 1e-7; ++it) {
    // Maximize; on ties keep the lower bracket (smaller temperature).
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double u_star = fc >= fd ? c : d;

  std::vector<std::pair<double, double>> candidates = {
      {bounds.lo, f(std::log(bounds.lo))},
      {std::exp(u_star), f(u_star)},
      {bounds.hi, f(std::log(bounds.hi))}};
  std::sort(candidates.begin(), candidates.end());
  TemperatureFit best{candidates[0].first, candidates[0].second};
  for (const auto& [tau, obj] : candidates) {
    if (obj > best.objective) best = {tau, obj};
  }
  return best;
}

TemperatureFit fit_temperature(const ReorderModel& model,
                               std::span<const std::pair<Tokens, Tokens>> pairs,
                               const TemperatureBounds& bounds) {
  if (pairs.empty()) throw DataError("fit_temperature: no held-out pairs");
  std::vector<StepTable> tables;
  tables.reserve(pairs.size());
  for (const auto& [s, t] : pairs) {
    if (BagOfWords(s) != BagOfWords(t))
      throw MultisetMismatch("fit_temperature: pair is not a reordering");
    tables.push_back(model.step_table(s));
  }
  return fit_temperature(tables, bounds);
}

std::vector<Reconstruction> read_reconstructions(std::istream& in) {
  std::vector<Reconstruction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("sentence_id").get<std::string>(), j.at("seed").get<std::uint64_t>(),
                     j.at("tokens").get<Tokens>(), j.at("logq").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError("reconstruction line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_reconstructions(std::ostream& out, std::span<const Reconstruction> records) {
  for (const auto& r : records) {
    nlohmann::json j = {{"sentence_id", r.sentence_id}, {"seed", r.seed}, {"tokens", r.tokens}, {"logq", r.logq}};
    out << j.dump() << '\n';
  }
}

}  // namespace wordorder
