#include "wordorder/textdata.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_set>

#include "json.hpp"

#include "wordorder/random.hpp"

namespace wordorder {

using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kProbe: return "probe";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val" || name == "validation") return Split::kVal;
  if (name == "probe" || name == "test") return Split::kProbe;
  throw DataError("unknown split '" + std::string(name) + "'");
}

Tokens tokenize(std::string_view text, bool lowercase) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (const char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, raw);
    } else {
      current.push_back(lowercase && c < 0x80 ? static_cast<char>(std::tolower(c)) : raw);
    }
  }
  flush();
  if (out.empty()) throw DataError("empty input: nothing to tokenize");
  return out;
}

std::string join(std::span<const Token> tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

std::vector<std::size_t> scramble_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  SplitMix64 rng(seed);
  for (std::size_t i = n; i-- > 1;) {
    const auto j = static_cast<std::size_t>(rng.uniform(i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

Tokens scramble(std::span<const Token> tokens, std::uint64_t seed) {
  if (tokens.empty()) throw DataError("scramble: empty token sequence");
  const auto perm = scramble_permutation(tokens.size(), seed);
  Tokens out;
  out.reserve(tokens.size());
  for (const auto idx : perm) out.push_back(tokens[idx]);
  return out;
}

std::vector<std::uint64_t> default_seeds(std::size_t k) {
  std::vector<std::uint64_t> seeds(k);
  for (std::size_t i = 0; i < k; ++i) seeds[i] = i + 1;
  return seeds;
}

std::vector<ScramblePair> make_scramble_set(std::span<const SentenceRecord> corpus,
                                            std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw DataError("make_scramble_set: seed list is empty");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw DataError("make_scramble_set: duplicate seeds");
  std::vector<ScramblePair> pairs;
  pairs.reserve(corpus.size() * seeds.size());
  for (const auto& rec : corpus) {
    for (const auto seed : seeds) {
      pairs.push_back({rec.id, seed, scramble(rec.tokens, seed)});
    }
  }
  return pairs;
}

CorpusStats corpus_stats(std::span<const SentenceRecord> corpus, std::string_view task) {
  CorpusStats stats{std::string(task), 0, 0.0};
  double total = 0.0;
  for (const auto& rec : corpus) {
    if (task != "*" && rec.task != task) continue;
    ++stats.n_sentences;
    total += static_cast<double>(rec.tokens.size());
  }
  if (stats.n_sentences == 0) throw DataError("unknown task '" + std::string(task) + "'");
  stats.avg_length = total / static_cast<double>(stats.n_sentences);
  return stats;
}

std::vector<CorpusStats> corpus_stats_by_task(std::span<const SentenceRecord> corpus) {
  std::set<std::string> tasks;
  for (const auto& rec : corpus) tasks.insert(rec.task);
  std::vector<CorpusStats> out;
  for (const auto& t : tasks) out.push_back(corpus_stats(corpus, t));
  return out;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::string trim_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

std::vector<SentenceRecord> read_sentences(std::istream& in, bool lowercase) {
  std::vector<SentenceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_cr(std::move(line));
    if (is_blank(line)) continue;
    SentenceRecord rec;
    try {
      if (line.front() == '{') {
        const json j = json::parse(line);
        rec.id = j.at("id").get<std::string>();
        rec.task = j.value("task", std::string("generic"));
        rec.split = parse_split(j.value("split", std::string("train")));
        if (j.contains("tokens")) {
          rec.tokens = j.at("tokens").get<Tokens>();
          if (lowercase) {
            for (auto& t : rec.tokens)
              for (auto& c : t)
                if (static_cast<unsigned char>(c) < 0x80)
                  c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
          }
        } else {
          rec.tokens = tokenize(j.at("text").get<std::string>(), lowercase);
        }
      } else {
        const auto fields = split_tabs(line);
        if (fields.size() != 4) throw DataError("expected 4 tab-separated fields");
        rec.id = fields[0];
        rec.task = fields[1];
        rec.split = parse_split(fields[2]);
        rec.tokens = tokenize(fields[3], lowercase);
      }
    } catch (const json::exception& e) {
      throw DataError("sentence file line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("sentence file line " + std::to_string(lineno) + ": " + e.what());
    }
    if (rec.tokens.empty())
      throw DataError("sentence file line " + std::to_string(lineno) + ": no tokens");
    out.push_back(std::move(rec));
  }
  validate_corpus(out);
  return out;
}

void write_sentences(std::ostream& out, std::span<const SentenceRecord> records) {
  for (const auto& rec : records) {
    json j;
    j["id"] = rec.id;
    j["task"] = rec.task;
    j["split"] = std::string(to_string(rec.split));
    j["text"] = join(rec.tokens);
    j["tokens"] = rec.tokens;
    out << j.dump() << '\n';
  }
}

std::vector<ScramblePair> read_scrambles(std::istream& in) {
  std::vector<ScramblePair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_cr(std::move(line));
    if (is_blank(line)) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("sentence_id").get<std::string>(), j.at("seed").get<std::uint64_t>(),
                     j.at("scrambled").get<Tokens>()});
    } catch (const json::exception& e) {
      throw DataError("scramble file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_scrambles(std::ostream& out, std::span<const ScramblePair> pairs) {
  for (const auto& p : pairs) {
    json j;
    j["sentence_id"] = p.sentence_id;
    j["seed"] = p.seed;
    j["scrambled"] = p.scrambled;
    out << j.dump() << '\n';
  }
}

void validate_corpus(std::span<const SentenceRecord> corpus) {
  std::unordered_set<std::string> seen;
  for (const auto& rec : corpus) {
    if (rec.tokens.empty()) throw DataError("sentence '" + rec.id + "' has no tokens");
    if (!seen.insert(rec.id).second) throw DataError("duplicate sentence id '" + rec.id + "'");
  }
}

}  // namespace wordorder
