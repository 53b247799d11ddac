#include "wordorder/cli.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wordorder/cfgbench.hpp"
#include "wordorder/consistency.hpp"
#include "wordorder/infometrics.hpp"
#include "wordorder/ngram.hpp"
#include "wordorder/random.hpp"
#include "wordorder/regression.hpp"
#include "wordorder/reorder.hpp"
#include "wordorder/scorer.hpp"
#include "wordorder/textdata.hpp"

namespace wordorder::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

void write_file_atomic(const fs::path& path, const std::function<void(std::ostream&)>& writer) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  try {
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw DataError("cannot write " + tmp.string());
      writer(f);
      f.flush();
      if (!f) throw DataError("write failed: " + path.string());
    }
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

namespace {

std::ifstream open_input(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path);
  return f;
}

std::vector<SentenceRecord> load_corpus(const std::string& path) {
  auto f = open_input(path);
  auto corpus = read_sentences(f);
  validate_corpus(corpus);
  return corpus;
}

std::vector<SentenceRecord> filter_split(std::vector<SentenceRecord> corpus, const std::string& split) {
  if (split == "all") return corpus;
  const Split want = parse_split(split);
  std::erase_if(corpus, [&](const SentenceRecord& r) { return r.split != want; });
  return corpus;
}

std::shared_ptr<const NgramModel> load_lm(const std::string& path) {
  auto f = open_input(path);
  return std::make_shared<const NgramModel>(NgramModel::load(f));
}

ReorderModel load_reorder(const std::string& path) {
  auto f = open_input(path);
  return ReorderModel::load(f);
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t k) {
  if (k == 0) throw UsageError("--k-scrambles must be at least 1");
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < k; ++i) seeds.push_back(first + i);
  return seeds;
}

unsigned thread_count(int requested) {
  if (requested > 0) return static_cast<unsigned>(requested);
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) on a pool; results are written by index so
// output order never depends on scheduling.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- scorer options shared by pmi and probe

struct ScorerArgs {
  std::string command;
  std::string transport = "stdio";
  std::string host = "127.0.0.1";
  int port = 0;
  int timeout_ms = 30000;
  std::vector<std::string> use;

  void add(CLI::App* app) {
    app->add_option("--scorer-cmd", command, "External scorer command line (whitespace separated)");
    app->add_option("--scorer-transport", transport, "stdio or tcp")->check(CLI::IsMember({"stdio", "tcp"}));
    app->add_option("--scorer-host", host, "Scorer host for tcp");
    app->add_option("--scorer-port", port, "Scorer port for tcp");
    app->add_option("--scorer-timeout-ms", timeout_ms, "Per-request timeout")->check(CLI::PositiveNumber);
    app->add_option("--scorer-use", use, "Ops routed to the scorer (default: all it declares)")
        ->check(CLI::IsMember({"logp_sentence", "logp_cond", "classify"}));
  }

  ScorerConfig config() const {
    ScorerConfig c;
    c.transport = parse_transport(transport);
    std::istringstream words(command);
    for (std::string w; words >> w;) c.command.push_back(w);
    c.host = host;
    c.port = port;
    c.timeout = std::chrono::milliseconds(timeout_ms);
    for (const auto& u : use) c.use.insert(parse_capability(u));
    return c;
  }
};

// ---- ingest

struct IngestArgs {
  std::vector<std::string> inputs;
  std::string output;
  std::string format = "auto";
  std::string task = "generic";
  std::string split = "train";
  std::string id_prefix;
  std::string stats;
  std::size_t max_length = 0;
  bool lowercase = false;
};

std::vector<SentenceRecord> read_plain_text(std::istream& in, const IngestArgs& a, std::size_t& counter) {
  std::vector<SentenceRecord> out;
  const std::string prefix = a.id_prefix.empty() ? a.task : a.id_prefix;
  const Split split = parse_split(a.split);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    char id[32];
    std::snprintf(id, sizeof id, "-%06zu", counter++);
    out.push_back({prefix + id, a.task, tokenize(line, a.lowercase), split});
  }
  return out;
}

int cmd_ingest(const IngestArgs& a, std::ostream& out) {
  std::vector<SentenceRecord> corpus;
  std::size_t counter = 0;
  for (const auto& path : a.inputs) {
    auto f = open_input(path);
    const bool text = a.format == "text" || (a.format == "auto" && fs::path(path).extension() == ".txt");
    auto part = text ? read_plain_text(f, a, counter) : read_sentences(f, a.lowercase);
    corpus.insert(corpus.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (a.max_length > 0)
    std::erase_if(corpus, [&](const SentenceRecord& r) { return r.tokens.size() > a.max_length; });
  validate_corpus(corpus);
  write_file_atomic(a.output, [&](std::ostream& o) { write_sentences(o, corpus); });
  if (!a.stats.empty()) {
    write_file_atomic(a.stats, [&](std::ostream& o) {
      o << "task,n_sentences,avg_length\n";
      for (const auto& s : corpus_stats_by_task(corpus))
        o << s.task << ',' << s.n_sentences << ',' << fmt(s.avg_length) << '\n';
    });
  }
  out << "ingested " << corpus.size() << " sentences\n";
  return kOk;
}

// ---- scramble

struct ScrambleArgs {
  std::string corpus, output, split = "all";
  std::size_t k = 6;
  std::uint64_t seed = 1;
};

int cmd_scramble(const ScrambleArgs& a, std::ostream& out) {
  const auto corpus = filter_split(load_corpus(a.corpus), a.split);
  const auto seeds = seed_range(a.seed, a.k);
  const auto pairs = make_scramble_set(corpus, seeds);
  write_file_atomic(a.output, [&](std::ostream& o) { write_scrambles(o, pairs); });
  out << "wrote " << pairs.size() << " scrambles\n";
  return kOk;
}

// ---- train-lm

struct TrainLmArgs {
  std::string corpus, output, split = "train";
  int order = 3;
  std::size_t min_count = 2;
};

int cmd_train_lm(const TrainLmArgs& a, std::ostream& out) {
  const auto corpus = filter_split(load_corpus(a.corpus), a.split);
  std::vector<Tokens> text;
  for (const auto& r : corpus) text.push_back(r.tokens);
  const auto lm = NgramModel::train(text, {a.order, a.min_count});
  write_file_atomic(a.output, [&](std::ostream& o) { lm.save(o); });
  out << "trained order-" << a.order << " model on " << text.size() << " sentences, support "
      << lm.support_size() << "\n";
  return kOk;
}

// ---- fit-reorder

struct FitReorderArgs {
  std::string corpus, lm, output, split = "val";
  std::size_t k = 6;
  std::uint64_t seed = 1;
  double tau_min = 0.05, tau_max = 20.0;
};

int cmd_fit_reorder(const FitReorderArgs& a, std::ostream& out) {
  const auto corpus = filter_split(load_corpus(a.corpus), a.split);
  if (corpus.empty()) throw DataError("fit-reorder: no sentences in split " + a.split);
  const ReorderModel base(load_lm(a.lm));
  std::map<std::string, const Tokens*> originals;
  for (const auto& r : corpus) originals[r.id] = &r.tokens;
  std::vector<std::pair<Tokens, Tokens>> pairs;
  for (auto& p : make_scramble_set(corpus, seed_range(a.seed, a.k)))
    pairs.emplace_back(*originals.at(p.sentence_id), std::move(p.scrambled));
  const auto fit = fit_temperature(base, pairs, {a.tau_min, a.tau_max});
  const auto model = base.with_temperature(fit.temperature);
  write_file_atomic(a.output, [&](std::ostream& o) { model.save(o); });
  out << "temperature " << fmt(fit.temperature) << " mean_logq " << fmt(fit.objective) << "\n";
  return kOk;
}

// ---- pmi

struct PmiArgs {
  std::string corpus, scrambles, lm, reorder, output;
  int threads = 0;
  ScorerArgs scorer;
};

int cmd_pmi(const PmiArgs& a, std::ostream& out) {
  const auto corpus = load_corpus(a.corpus);
  std::vector<ScramblePair> pairs;
  {
    auto f = open_input(a.scrambles);
    pairs = read_scrambles(f);
  }
  const ScorerConfig sc = a.scorer.config();
  Providers internal;
  if (!a.lm.empty()) internal.sentence = std::make_shared<NgramSentenceScorer>(load_lm(a.lm));
  if (!a.reorder.empty()) internal.conditional = std::make_shared<ReorderConditionalScorer>(load_reorder(a.reorder));
  const Providers providers = fallback_resolve(sc, internal);
  if (!providers.sentence) throw UsageError("pmi: need --lm or a scorer declaring logp_sentence");
  if (!providers.conditional) throw UsageError("pmi: need --reorder or a scorer declaring logp_cond");

  std::map<std::string, std::vector<ScramblePair>> by_sentence;
  for (auto& p : pairs) by_sentence[p.sentence_id].push_back(std::move(p));
  {
    std::set<std::string> ids;
    for (const auto& r : corpus) ids.insert(r.id);
    for (const auto& [id, _] : by_sentence)
      if (!ids.contains(id)) throw DataError("pmi: scramble of unknown sentence " + id);
  }

  std::vector<std::vector<PmiRecord>> rows(corpus.size());
  const bool external = providers.handle != nullptr;
  parallel_for(corpus.size(), external ? 1u : thread_count(a.threads), [&](std::size_t i) {
    auto it = by_sentence.find(corpus[i].id);
    if (it == by_sentence.end()) return;
    rows[i] = sentence_pmi(corpus[i], it->second, *providers.sentence, *providers.conditional);
  });
  std::vector<PmiRecord> all;
  for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  write_file_atomic(a.output, [&](std::ostream& o) { write_pmi_records(o, all); });
  out << "wrote " << all.size() << " pmi rows\n";
  return kOk;
}

// ---- mi

struct MiArgs {
  std::string pmi, corpus, output;
};

std::map<std::string, std::string> task_of(const std::vector<SentenceRecord>& corpus) {
  std::map<std::string, std::string> m;
  for (const auto& r : corpus) m[r.id] = r.task;
  return m;
}

void write_mi_table(std::ostream& o, const std::vector<PmiRecord>& records,
                    const std::map<std::string, std::string>& tasks) {
  std::map<std::string, std::vector<double>> per_task;
  std::vector<double> all;
  for (const auto& r : records) {
    if (!r.seed) continue;
    all.push_back(r.pmi_bits);
    if (auto it = tasks.find(r.sentence_id); it != tasks.end()) per_task[it->second].push_back(r.pmi_bits);
  }
  o << "task,n_pairs,bound_bits,std_err\n";
  auto row = [&](const std::string& task, const std::vector<double>& v) {
    const auto e = mi_bound(v);
    o << task << ',' << e.n_pairs << ',' << fmt(e.bound_bits) << ',' << fmt(e.std_err) << '\n';
  };
  row("*", all);
  for (const auto& [task, v] : per_task) row(task, v);
}

int cmd_mi(const MiArgs& a, std::ostream& out) {
  auto f = open_input(a.pmi);
  const auto records = read_pmi_records(f);
  std::map<std::string, std::string> tasks;
  if (!a.corpus.empty()) tasks = task_of(load_corpus(a.corpus));
  std::ostringstream table;
  write_mi_table(table, records, tasks);
  write_file_atomic(a.output, [&](std::ostream& o) { o << table.str(); });
  out << table.str();
  return kOk;
}

// ---- probe

struct ProbeArgs {
  std::string corpus, reorder, scrambles, output, reconstructions, split = "all";
  std::size_t k = 6;
  std::uint64_t seed = 1;
  std::size_t beam = 16;
  std::string normalization = "max", granularity = "token";
  int threads = 0;
};

int cmd_probe(const ProbeArgs& a, std::ostream& out) {
  const auto corpus = filter_split(load_corpus(a.corpus), a.split);
  const ReorderModel model = load_reorder(a.reorder);
  AccuracyOptions opts;
  opts.normalization = a.normalization == "metric" ? LdNormalization::kMetric : LdNormalization::kMaxLength;
  opts.granularity = a.granularity == "char" ? LdGranularity::kCharacter : LdGranularity::kToken;
  if (a.beam == 0) throw UsageError("--beam must be at least 1");

  std::vector<ScramblePair> pairs;
  if (!a.scrambles.empty()) {
    auto f = open_input(a.scrambles);
    pairs = read_scrambles(f);
  } else {
    pairs = make_scramble_set(corpus, seed_range(a.seed, a.k));
  }
  std::map<std::string, const SentenceRecord*> index;
  for (const auto& r : corpus) index[r.id] = &r;
  std::erase_if(pairs, [&](const ScramblePair& p) { return !index.contains(p.sentence_id); });

  std::vector<ProbeScores> scores(pairs.size());
  std::vector<Reconstruction> decoded(pairs.size());
  parallel_for(pairs.size(), thread_count(a.threads), [&](std::size_t i) {
    const auto& p = pairs[i];
    const auto& original = index.at(p.sentence_id)->tokens;
    auto d = model.decode(p.scrambled, a.beam);
    scores[i] = {p.sentence_id, p.seed, probe_accuracy(original, d.tokens, opts),
                 control_accuracy(original, p.scrambled, opts)};
    decoded[i] = {p.sentence_id, p.seed, std::move(d.tokens), d.logq};
  });
  write_file_atomic(a.output, [&](std::ostream& o) { write_probe_scores(o, scores); });
  if (!a.reconstructions.empty())
    write_file_atomic(a.reconstructions, [&](std::ostream& o) { write_reconstructions(o, decoded); });
  double pa = 0.0, ca = 0.0;
  for (const auto& s : scores) {
    pa += s.pa;
    ca += s.ca;
  }
  const double n = std::max<std::size_t>(1, scores.size());
  out << "mean_pa " << fmt(pa / n) << " mean_ca " << fmt(ca / n) << "\n";
  return kOk;
}

// ---- cfg-gen

struct CfgGenArgs {
  std::string grammar, output, task, id_prefix = "cfg";
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  bool dedup = false;
};

int cmd_cfg_gen(const CfgGenArgs& a, std::ostream& out) {
  const Grammar g = Grammar::load(a.grammar);
  GenerateOptions opts;
  opts.dedup = a.dedup;
  opts.id_prefix = a.id_prefix;
  opts.task = a.task.empty() ? (g.type() ? "cfg-" + std::string(to_string(*g.type())) : "cfg") : a.task;
  const auto set = generate(g, a.n, a.seed, opts);
  write_file_atomic(a.output, [&](std::ostream& o) { write_sentences(o, set.sentences); });
  out << "generated " << set.sentences.size() << " sentences\n";
  return kOk;
}

// ---- cfg-eval

struct CfgEvalArgs {
  std::vector<std::string> grammars;
  std::string output;
  std::size_t n = 1000, k = 6, beam = 16, train_sentences = 20000, min_count = 2;
  std::uint64_t seed = 1;
  int order = 3;
};

int cmd_cfg_eval(const CfgEvalArgs& a, std::ostream& out) {
  std::vector<Grammar> grammars;
  for (const auto& path : a.grammars) {
    grammars.push_back(Grammar::load(path));
    if (!grammars.back().type()) throw DataError("cfg-eval: grammar without %type: " + path);
  }
  std::vector<GeneratedSet> sets;
  for (std::size_t i = 0; i < grammars.size(); ++i) {
    GenerateOptions opts;
    opts.id_prefix = "eval-" + std::string(to_string(*grammars[i].type())) + "-";
    sets.push_back(generate(grammars[i], a.n, derive_seed(a.seed, i), opts));
  }
  CfgReordererOptions ropts;
  ropts.sentences_per_grammar = a.train_sentences;
  ropts.order = a.order;
  ropts.min_count = a.min_count;
  ropts.seed = derive_seed(a.seed, 1000);
  const auto reorderer = train_cfg_reorderer(grammars, sets, ropts);
  const auto seeds = seed_range(a.seed, a.k);
  std::vector<AccuracyReport> reports;
  for (const auto& s : sets) reports.push_back(evaluate_reordering(s, reorderer.model, seeds, a.beam));
  write_file_atomic(a.output, [&](std::ostream& o) {
    o << "type,mean_exact_match,variance,seed_accuracies\n";
    for (const auto& r : reports) {
      o << to_string(r.type) << ',' << fmt(r.mean_exact_match) << ',' << fmt(r.variance) << ',';
      for (std::size_t i = 0; i < r.per_seed_accuracies.size(); ++i)
        o << (i ? ";" : "") << fmt(r.per_seed_accuracies[i]);
      o << '\n';
    }
  });
  out << "temperature " << fmt(reorderer.fit.temperature) << "\n";
  for (const auto& r : reports)
    out << "type " << to_string(r.type) << " accuracy " << fmt(r.mean_exact_match) << "\n";
  return kOk;
}

// ---- build-consistency

struct ConsistencyArgs {
  std::string predictions, samples, scrambles, predictions_out, pmi, output, granularity = "averaged",
      pair_mode = "average";
  ScorerArgs scorer;
};

int cmd_build_consistency(const ConsistencyArgs& a, std::ostream& out) {
  std::vector<PredictionRecord> preds;
  std::vector<PmiRecord> pmi;
  if (!a.predictions.empty()) {
    auto f = open_input(a.predictions);
    preds = read_predictions(f);
  } else {
    if (a.samples.empty() || a.scrambles.empty())
      throw UsageError("build-consistency: give --predictions, or --samples and --scrambles with a scorer");
    std::vector<LabeledSample> samples;
    std::vector<ScramblePair> pairs;
    {
      auto f = open_input(a.samples);
      samples = read_labeled_samples(f);
    }
    {
      auto f = open_input(a.scrambles);
      pairs = read_scrambles(f);
    }
    const Providers providers = fallback_resolve(a.scorer.config(), {});
    if (!providers.classifier) throw UsageError("build-consistency: no scorer declaring classify is configured");
    preds = collect_predictions(samples, pairs, *providers.classifier);
  }
  {
    auto f = open_input(a.pmi);
    pmi = read_pmi_records(f);
  }
  BuildOptions opts{parse_granularity(a.granularity), parse_pair_mode(a.pair_mode)};
  const auto rows = build_dataset(preds, pmi, opts);
  if (!a.predictions_out.empty())
    write_file_atomic(a.predictions_out, [&](std::ostream& o) { write_predictions(o, preds); });
  write_file_atomic(a.output, [&](std::ostream& o) { write_consistency_csv(o, rows); });
  out << "wrote " << rows.size() << " consistency rows\n";
  return kOk;
}

// ---- regress

struct RegressArgs {
  std::string data, output_dir, draws;
  int chains = 4, iterations = 1000, warmup = 1000, max_depth = 10, grid = 50;
  std::uint64_t seed = 1;
  bool no_length = false, no_intercepts = false, no_slopes = false, compare = false, holdout = false,
       sequential = false;
  double rope_low = -0.18, rope_high = 0.18, rope_threshold = 0.95, target_accept = 0.9;
};

int cmd_regress(const RegressArgs& a, std::ostream& out) {
  std::vector<ConsistencyRecord> records;
  {
    auto f = open_input(a.data);
    records = read_consistency_csv(f);
  }
  if (!(a.rope_low <= a.rope_high)) throw UsageError("--rope-low must not exceed --rope-high");
  const DesignMatrix design = standardize(records);
  MixedModelSpec spec;
  spec.include_length = !a.no_length;
  spec.random_intercepts = !a.no_intercepts;
  spec.random_slopes = !a.no_slopes;
  SamplerOptions so;
  so.chains = a.chains;
  so.iterations = a.iterations;
  so.warmup = a.warmup;
  so.seed = a.seed;
  so.max_depth = a.max_depth;
  so.target_accept = a.target_accept;
  so.parallel = !a.sequential;

  const fs::path dir(a.output_dir);
  const PosteriorDraws draws = fit(design, spec, so);
  write_file_atomic(dir / "fit_summary.csv", [&](std::ostream& o) { write_fit_summary(o, draws); });
  if (!draws.converged) throw ConvergenceError("regress: sampler did not converge: " + draws.diagnostics);
  if (!a.draws.empty()) write_file_atomic(a.draws, [&](std::ostream& o) { write_draws(o, draws); });

  const RopeBounds bounds{a.rope_low, a.rope_high};
  const auto ropes = rope_table(draws, bounds, a.rope_threshold);
  write_file_atomic(dir / "rope.csv", [&](std::ostream& o) { write_rope_report(o, ropes); });
  CurveOptions co;
  co.grid_points = a.grid;
  const auto curves = simulate_curves(draws, design, co);
  write_file_atomic(dir / "curves.csv", [&](std::ostream& o) { write_curves(o, curves); });

  if (a.compare) {
    MixedModelSpec other = spec;
    other.include_length = !spec.include_length;
    const PosteriorDraws alt = fit(design, other, so);
    if (!alt.converged) throw ConvergenceError("regress: comparison fit did not converge: " + alt.diagnostics);
    ComparisonOptions copts;
    copts.holdout = a.holdout;
    copts.sampler = so;
    const auto cmp = spec.include_length ? compare(draws, alt, design, copts) : compare(alt, draws, design, copts);
    write_file_atomic(dir / "comparison.csv", [&](std::ostream& o) { write_comparison(o, cmp); });
  }

  const Summary b = summarize(draws, "b_pmi");
  out << "b_pmi mean " << fmt(b.mean) << " se " << fmt(b.se) << " ci [" << fmt(b.ci_low) << ", " << fmt(b.ci_high)
      << "] rhat " << fmt(b.rhat) << "\n";
  return kOk;
}

// ---- report

struct ReportArgs {
  std::string pmi, corpus, probe, curves, output_dir;
  std::size_t bins = 20;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<PmiRecord> pmi;
  {
    auto f = open_input(a.pmi);
    pmi = read_pmi_records(f);
  }
  const auto corpus = load_corpus(a.corpus);
  const auto tasks = task_of(corpus);
  std::vector<ProbeScores> probe;
  if (!a.probe.empty()) {
    auto f = open_input(a.probe);
    probe = read_probe_scores(f);
  }
  std::string curves;
  if (!a.curves.empty()) {
    auto f = open_input(a.curves);
    std::ostringstream s;
    s << f.rdbuf();
    curves = s.str();
    if (!curves.starts_with("task,pmi,mean,band_low,band_high")) throw DataError("report: not a curves file");
  }
  if (a.bins == 0) throw UsageError("--bins must be at least 1");

  std::map<std::string, std::vector<PmiRecord>> avg_by_task;
  for (const auto& r : pmi) {
    if (r.seed) continue;
    auto it = tasks.find(r.sentence_id);
    if (it == tasks.end()) throw DataError("report: pmi row for unknown sentence " + r.sentence_id);
    avg_by_task[it->second].push_back(r);
  }

  const fs::path dir(a.output_dir);
  write_file_atomic(dir / "pmi_boxplot.csv", [&](std::ostream& o) {
    o << "task,n,min,q1,median,q3,max,mean\n";
    for (const auto& [task, rows] : avg_by_task) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) v[static_cast<Eigen::Index>(i)] = rows[i].pmi_bits;
      o << task << ',' << rows.size() << ',' << fmt(v.minCoeff()) << ',' << fmt(quantile(v, 0.25)) << ','
        << fmt(quantile(v, 0.5)) << ',' << fmt(quantile(v, 0.75)) << ',' << fmt(v.maxCoeff()) << ','
        << fmt(v.mean()) << '\n';
    }
  });
  write_file_atomic(dir / "length_pmi_correlation.csv", [&](std::ostream& o) {
    o << "task,n,r,ci_low,ci_high\n";
    for (const auto& [task, rows] : avg_by_task) {
      if (rows.size() < 3) continue;
      try {
        const auto c = length_pmi_correlation(rows);
        o << task << ',' << c.n << ',' << fmt(c.r) << ',' << fmt(c.ci_low) << ',' << fmt(c.ci_high) << '\n';
      } catch (const DataError&) {
        // zero variance in one column: no correlation to report
      }
    }
  });
  write_file_atomic(dir / "mi.csv", [&](std::ostream& o) { write_mi_table(o, pmi, tasks); });
  if (!probe.empty()) {
    write_file_atomic(dir / "accuracy_histogram.csv", [&](std::ostream& o) {
      std::vector<double> pa, ca;
      for (const auto& s : probe) {
        pa.push_back(s.pa);
        ca.push_back(s.ca);
      }
      o << "metric,bin_low,bin_high,count\n";
      for (const auto& [name, v] : {std::pair{"pa", &pa}, std::pair{"ca", &ca}})
        for (const auto& b : histogram(*v, a.bins))
          o << name << ',' << fmt(b.lo) << ',' << fmt(b.hi) << ',' << b.count << '\n';
    });
  }
  if (!curves.empty()) write_file_atomic(dir / "fitted_curves.csv", [&](std::ostream& o) { o << curves; });
  out << "report written to " << dir.string() << "\n";
  return kOk;
}

void error_record(std::ostream& err, const std::string& kind, int code, const std::string& command,
                  const std::string& message) {
  json j = {{"status", "error"}, {"kind", kind}, {"exit_code", code}, {"command", command}, {"message", message}};
  err << j.dump() << std::endl;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Word-order informativeness toolkit", "wordorder"};
  app.config_formatter(std::make_shared<CLI::ConfigINI>());
  app.set_config("--config", "", "INI config file; sections are subcommand names")->envname("WORDORDER_CONFIG");
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* s_ingest = app.add_subcommand("ingest", "Normalize sentence files into a JSONL corpus");
  s_ingest->add_option("--input", ingest.inputs, "Input files (.jsonl, .tsv or .txt)")->required();
  s_ingest->add_option("--output", ingest.output)->required();
  s_ingest->add_option("--format", ingest.format)->check(CLI::IsMember({"auto", "jsonl", "tsv", "text"}));
  s_ingest->add_option("--task", ingest.task, "Task for plain-text input");
  s_ingest->add_option("--split", ingest.split, "Split for plain-text input");
  s_ingest->add_option("--id-prefix", ingest.id_prefix);
  s_ingest->add_option("--stats", ingest.stats, "Per-task length statistics CSV");
  s_ingest->add_option("--max-length", ingest.max_length, "Drop sentences longer than this (0 keeps all)");
  s_ingest->add_flag("--lowercase", ingest.lowercase);

  ScrambleArgs scr;
  auto* s_scramble = app.add_subcommand("scramble", "Scramble each sentence with K seeds");
  s_scramble->add_option("--corpus", scr.corpus)->required();
  s_scramble->add_option("--output", scr.output)->required();
  s_scramble->add_option("--k-scrambles", scr.k, "Seeds seed..seed+K-1");
  s_scramble->add_option("--seed", scr.seed);
  s_scramble->add_option("--split", scr.split);

  TrainLmArgs tlm;
  auto* s_train = app.add_subcommand("train-lm", "Train a Kneser-Ney n-gram model");
  s_train->add_option("--corpus", tlm.corpus)->required();
  s_train->add_option("--output", tlm.output)->required();
  s_train->add_option("--order", tlm.order)->check(CLI::Range(1, 5));
  s_train->add_option("--min-count", tlm.min_count)->check(CLI::PositiveNumber);
  s_train->add_option("--split", tlm.split);

  FitReorderArgs fr;
  auto* s_fit = app.add_subcommand("fit-reorder", "Fit the reordering temperature");
  s_fit->add_option("--corpus", fr.corpus)->required();
  s_fit->add_option("--lm", fr.lm, "Step language model")->required();
  s_fit->add_option("--output", fr.output)->required();
  s_fit->add_option("--split", fr.split);
  s_fit->add_option("--k-scrambles", fr.k);
  s_fit->add_option("--seed", fr.seed);
  s_fit->add_option("--tau-min", fr.tau_min)->check(CLI::PositiveNumber);
  s_fit->add_option("--tau-max", fr.tau_max)->check(CLI::PositiveNumber);

  PmiArgs pm;
  auto* s_pmi = app.add_subcommand("pmi", "Per-pair and per-sentence PMI");
  s_pmi->add_option("--corpus", pm.corpus)->required();
  s_pmi->add_option("--scrambles", pm.scrambles)->required();
  s_pmi->add_option("--lm", pm.lm, "Sentence language model");
  s_pmi->add_option("--reorder", pm.reorder, "Reordering model");
  s_pmi->add_option("--output", pm.output)->required();
  s_pmi->add_option("--threads", pm.threads);
  pm.scorer.add(s_pmi);

  MiArgs mi;
  auto* s_mi = app.add_subcommand("mi", "Mutual-information lower bound");
  s_mi->add_option("--pmi", mi.pmi)->required();
  s_mi->add_option("--corpus", mi.corpus, "Corpus for per-task rows");
  s_mi->add_option("--output", mi.output)->required();

  ProbeArgs pr;
  auto* s_probe = app.add_subcommand("probe", "Reconstruct scrambles and score PA/CA");
  s_probe->add_option("--corpus", pr.corpus)->required();
  s_probe->add_option("--reorder", pr.reorder)->required();
  s_probe->add_option("--scrambles", pr.scrambles);
  s_probe->add_option("--output", pr.output)->required();
  s_probe->add_option("--reconstructions", pr.reconstructions, "Decoded orderings (JSON lines)");
  s_probe->add_option("--split", pr.split);
  s_probe->add_option("--k-scrambles", pr.k);
  s_probe->add_option("--seed", pr.seed);
  s_probe->add_option("--beam", pr.beam);
  s_probe->add_option("--normalization", pr.normalization)->check(CLI::IsMember({"max", "metric"}));
  s_probe->add_option("--granularity", pr.granularity)->check(CLI::IsMember({"token", "char"}));
  s_probe->add_option("--threads", pr.threads);

  CfgGenArgs cg;
  auto* s_cfg_gen = app.add_subcommand("cfg-gen", "Generate sentences from a grammar");
  s_cfg_gen->add_option("--grammar", cg.grammar)->required();
  s_cfg_gen->add_option("--output", cg.output)->required();
  s_cfg_gen->add_option("--n", cg.n);
  s_cfg_gen->add_option("--seed", cg.seed);
  s_cfg_gen->add_option("--task", cg.task);
  s_cfg_gen->add_option("--id-prefix", cg.id_prefix);
  s_cfg_gen->add_flag("--dedup", cg.dedup);

  CfgEvalArgs ce;
  auto* s_cfg_eval = app.add_subcommand("cfg-eval", "Reordering accuracy on grammar-generated sentences");
  s_cfg_eval->add_option("--grammar", ce.grammars)->required();
  s_cfg_eval->add_option("--output", ce.output)->required();
  s_cfg_eval->add_option("--n", ce.n);
  s_cfg_eval->add_option("--k-scrambles", ce.k);
  s_cfg_eval->add_option("--seed", ce.seed);
  s_cfg_eval->add_option("--beam", ce.beam)->check(CLI::PositiveNumber);
  s_cfg_eval->add_option("--train-sentences", ce.train_sentences);
  s_cfg_eval->add_option("--order", ce.order)->check(CLI::Range(1, 5));
  s_cfg_eval->add_option("--min-count", ce.min_count)->check(CLI::PositiveNumber);

  ConsistencyArgs bc;
  auto* s_bc = app.add_subcommand("build-consistency", "Join predictions with PMI into regression rows");
  auto* o_preds = s_bc->add_option("--predictions", bc.predictions, "Classifier predictions (JSON lines)");
  s_bc->add_option("--samples", bc.samples, "Labeled samples to classify through the scorer")->excludes(o_preds);
  s_bc->add_option("--scrambles", bc.scrambles, "Scrambles of the labeled samples");
  s_bc->add_option("--predictions-out", bc.predictions_out, "Where to save collected predictions");
  bc.scorer.add(s_bc);
  s_bc->add_option("--pmi", bc.pmi)->required();
  s_bc->add_option("--output", bc.output)->required();
  s_bc->add_option("--granularity", bc.granularity)->check(CLI::IsMember({"averaged", "per-seed"}));
  s_bc->add_option("--pair-mode", bc.pair_mode)->check(CLI::IsMember({"average", "first", "last"}));

  RegressArgs rg;
  auto* s_reg = app.add_subcommand("regress", "Bayesian mixed-effects logistic regression");
  s_reg->add_option("--data", rg.data)->required();
  s_reg->add_option("--output-dir", rg.output_dir)->required();
  s_reg->add_option("--chains", rg.chains)->check(CLI::Range(2, 64));
  s_reg->add_option("--iterations", rg.iterations)->check(CLI::Range(4, 1000000));
  s_reg->add_option("--warmup", rg.warmup)->check(CLI::Range(0, 1000000));
  s_reg->add_option("--seed", rg.seed);
  s_reg->add_option("--target-accept", rg.target_accept, "Step-size adaptation target")->check(CLI::Range(0.5, 0.999));
  s_reg->add_option("--max-depth", rg.max_depth)->check(CLI::Range(1, 15));
  s_reg->add_option("--draws", rg.draws, "Posterior draws CSV");
  s_reg->add_option("--grid", rg.grid)->check(CLI::PositiveNumber);
  s_reg->add_flag("--no-length", rg.no_length);
  s_reg->add_flag("--no-random-intercepts", rg.no_intercepts);
  s_reg->add_flag("--no-random-slopes", rg.no_slopes);
  s_reg->add_flag("--compare", rg.compare, "Also fit the model with/without length and compare");
  s_reg->add_flag("--holdout", rg.holdout, "Add a held-out predictive comparison");
  s_reg->add_flag("--sequential", rg.sequential, "Run chains one after another");
  s_reg->add_option("--rope-low", rg.rope_low);
  s_reg->add_option("--rope-high", rg.rope_high);
  s_reg->add_option("--rope-threshold", rg.rope_threshold)->check(CLI::Range(0.0, 1.0));

  ReportArgs rp;
  auto* s_report = app.add_subcommand("report", "Plot-ready summary tables");
  s_report->add_option("--pmi", rp.pmi)->required();
  s_report->add_option("--corpus", rp.corpus)->required();
  s_report->add_option("--probe", rp.probe);
  s_report->add_option("--curves", rp.curves);
  s_report->add_option("--output-dir", rp.output_dir)->required();
  s_report->add_option("--bins", rp.bins);

  std::string command;
  try {
    std::vector<std::string> argv_store{"wordorder"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
    for (const auto* sub : app.get_subcommands()) command = sub->get_name();

    if (s_ingest->parsed()) return cmd_ingest(ingest, out);
    if (s_scramble->parsed()) return cmd_scramble(scr, out);
    if (s_train->parsed()) return cmd_train_lm(tlm, out);
    if (s_fit->parsed()) return cmd_fit_reorder(fr, out);
    if (s_pmi->parsed()) return cmd_pmi(pm, out);
    if (s_mi->parsed()) return cmd_mi(mi, out);
    if (s_probe->parsed()) return cmd_probe(pr, out);
    if (s_cfg_gen->parsed()) return cmd_cfg_gen(cg, out);
    if (s_cfg_eval->parsed()) return cmd_cfg_eval(ce, out);
    if (s_bc->parsed()) return cmd_build_consistency(bc, out);
    if (s_reg->parsed()) return cmd_regress(rg, out);
    if (s_report->parsed()) return cmd_report(rp, out);
    throw UsageError("no subcommand given");
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    error_record(err, "usage", kUsage, command, e.what());
    return kUsage;
  } catch (const UsageError& e) {
    error_record(err, "usage", kUsage, command, e.what());
    return kUsage;
  } catch (const ConvergenceError& e) {
    error_record(err, "convergence", kConvergence, command, e.what());
    return kConvergence;
  } catch (const ProtocolError& e) {
    error_record(err, "scorer-protocol", kProtocol, command, e.what());
    return kProtocol;
  } catch (const std::exception& e) {
    error_record(err, "data", kData, command, e.what());
    return kData;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace wordorder::cli
