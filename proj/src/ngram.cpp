#include "wordorder/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace wordorder {

namespace {

constexpr std::array<double, 3> kFallbackDiscounts = {0.5, 1.0, 1.5};

std::array<double, 3> estimate_discounts(const std::vector<std::pair<std::vector<WordId>, double>>& level) {
  std::array<double, 5> n{};  // n[c] = number of n-grams with adjusted count c, c in 1..4
  for (const auto& [gram, c] : level) {
    const auto ci = static_cast<long>(c);
    if (ci >= 1 && ci <= 4) n[ci] += 1.0;
  }
  std::array<double, 3> d = kFallbackDiscounts;
  if (n[1] > 0.0 && n[2] > 0.0) {
    const double y = n[1] / (n[1] + 2.0 * n[2]);
    const std::array<double, 3> est = {1.0 - 2.0 * y * n[2] / n[1],
                                       n[3] > 0.0 ? 2.0 - 3.0 * y * n[3] / n[2] : -1.0,
                                       n[4] > 0.0 && n[3] > 0.0 ? 3.0 - 4.0 * y * n[4] / n[3] : -1.0};
    for (int k = 0; k < 3; ++k) {
      // D_k must lie in (0, k] so every seen n-gram keeps non-negative mass
      // and the backoff weight stays positive.
      if (std::isfinite(est[k]) && est[k] > 0.0 && est[k] <= k + 1.0) d[k] = est[k];
    }
  }
  return d;
}

double discount_for(const std::array<double, 3>& d, double c) {
  if (c <= 0.0) return 0.0;
  if (c < 1.5) return d[0];
  if (c < 2.5) return d[1];
  return d[2];
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw DataError("ngram model: bad number '" + s + "'");
  return v;
}

}  // namespace

NgramModel NgramModel::train(std::span<const Tokens> corpus, const NgramOptions& options) {
  if (options.order < 1 || options.order > 5)
    throw UsageError("ngram order must be in 1..5, got " + std::to_string(options.order));
  std::size_t n_tokens = 0;
  for (const auto& s : corpus) n_tokens += s.size();
  if (corpus.empty() || n_tokens == 0) throw DataError("cannot train an n-gram model on an empty corpus");

  std::map<std::string, std::size_t> freq;
  for (const auto& sentence : corpus) {
    for (const auto& tok : sentence) {
      if (tok == kUnkToken || tok == kBosToken || tok == kEosToken)
        throw DataError("corpus contains reserved symbol '" + tok + "'");
      ++freq[tok];
    }
  }

  NgramModel m;
  m.order_ = options.order;
  m.min_count_ = options.min_count;
  m.words_ = {std::string(kUnkToken), std::string(kBosToken), std::string(kEosToken)};
  for (const auto& [word, count] : freq)
    if (count >= options.min_count) m.words_.push_back(word);
  for (WordId i = 0; i < m.words_.size(); ++i) m.word_ids_.emplace(m.words_[i], i);

  const int order = m.order_;
  std::vector<std::map<std::vector<WordId>, double>> raw(order);
  std::vector<WordId> padded;
  for (const auto& sentence : corpus) {
    if (sentence.empty()) continue;
    padded.assign(1, kBos);
    for (const auto& tok : sentence) padded.push_back(m.id(tok));
    padded.push_back(kEos);
    for (std::size_t end = 1; end < padded.size(); ++end) {
      for (int len = 1; len <= order && static_cast<std::size_t>(len) <= end + 1; ++len) {
        std::vector<WordId> gram(padded.begin() + static_cast<long>(end + 1 - len),
                                 padded.begin() + static_cast<long>(end + 1));
        raw[len - 1][std::move(gram)] += 1.0;
      }
    }
  }

  // Lower orders use continuation counts N1+(. x); n-grams starting with <s>
  // have no left extension and keep their raw counts.
  std::vector<std::vector<std::pair<std::vector<WordId>, double>>> levels(order);
  for (int len = order; len >= 1; --len) {
    auto& level = levels[len - 1];
    if (len == order) {
      level.assign(raw[len - 1].begin(), raw[len - 1].end());
      continue;
    }
    std::map<std::vector<WordId>, double> cont;
    for (const auto& [gram, c] : raw[len]) {
      cont[std::vector<WordId>(gram.begin() + 1, gram.end())] += 1.0;
    }
    for (const auto& [gram, c] : raw[len - 1]) {
      level.emplace_back(gram, gram.front() == kBos ? c : cont.at(gram));
    }
  }

  m.discounts_.resize(order);
  for (int len = 1; len <= order; ++len) m.discounts_[len - 1] = estimate_discounts(levels[len - 1]);
  m.index_counts(levels);
  return m;
}

void NgramModel::index_counts(
    const std::vector<std::vector<std::pair<std::vector<WordId>, double>>>& levels) {
  levels_ = levels;
  contexts_.assign(1, Context{});
  context_depth_.assign(1, 0);
  children_.clear();
  counts_.clear();
  std::vector<std::array<double, 3>> buckets(1, {0.0, 0.0, 0.0});

  for (const auto& level : levels_) {
    for (const auto& [gram, c] : level) {
      std::uint32_t node = 0;
      for (std::size_t j = gram.size() - 1; j-- > 0;) {
        const auto k = key(node, gram[j]);
        auto it = children_.find(k);
        if (it == children_.end()) {
          const auto next = static_cast<std::uint32_t>(contexts_.size());
          contexts_.push_back(Context{});
          context_depth_.push_back(context_depth_[node] + 1);
          buckets.push_back({0.0, 0.0, 0.0});
          it = children_.emplace(k, next).first;
        }
        node = it->second;
      }
      counts_[key(node, gram.back())] = c;
      contexts_[node].total += c;
      buckets[node][c < 1.5 ? 0 : (c < 2.5 ? 1 : 2)] += 1.0;
    }
  }
  for (std::size_t node = 0; node < contexts_.size(); ++node) {
    auto& ctx = contexts_[node];
    const auto& d = discounts_[context_depth_[node]];
    const auto& b = buckets[node];
    ctx.backoff = (d[0] * b[0] + d[1] * b[1] + d[2] * b[2]) / ctx.total;
  }
}

std::vector<std::string> NgramModel::support() const {
  std::vector<std::string> out;
  for (WordId i = 0; i < words_.size(); ++i)
    if (i != kBos) out.push_back(words_[i]);
  return out;
}

WordId NgramModel::id(std::string_view token) const {
  const auto it = word_ids_.find(std::string(token));
  return it == word_ids_.end() ? kUnk : it->second;
}

std::vector<WordId> NgramModel::ids(std::span<const Token> tokens) const {
  std::vector<WordId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

double NgramModel::logp_next(std::span<const Token> context, std::string_view word) const {
  return logp_next(std::span<const WordId>(ids(context)), id(word));
}

double NgramModel::logp_next(std::span<const WordId> context, WordId word) const {
  if (word == kBos) throw std::invalid_argument("<s> is not a predictable symbol");
  double p = 1.0 / static_cast<double>(support_size());
  std::uint32_t node = 0;
  const std::size_t usable = std::min<std::size_t>(context.size(), static_cast<std::size_t>(order_ - 1));
  for (std::size_t j = 0;; ++j) {
    const auto& ctx = contexts_[node];
    const auto it = counts_.find(key(node, word));
    const double c = it == counts_.end() ? 0.0 : it->second;
    const double d = discount_for(discounts_[j], c);
    p = std::max(c - d, 0.0) / ctx.total + ctx.backoff * p;
    if (j == usable) break;
    const auto child = children_.find(key(node, context[context.size() - 1 - j]));
    if (child == children_.end()) break;
    node = child->second;
  }
  return std::log2(p);
}

double NgramModel::logp_sentence(std::span<const Token> tokens) const {
  std::vector<WordId> seq;
  seq.reserve(tokens.size() + 2);
  seq.push_back(kBos);
  for (const auto& t : tokens) seq.push_back(id(t));
  seq.push_back(kEos);
  double total = 0.0;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    total += logp_next(std::span<const WordId>(seq.data(), i), seq[i]);
  }
  return total;
}

void NgramModel::save(std::ostream& out) const {
  out << "wordorder-ngram 1\n";
  out << "order " << order_ << "\n";
  out << "min_count " << min_count_ << "\n";
  out << "words " << words_.size() - 3 << "\n";
  for (std::size_t i = 3; i < words_.size(); ++i) out << words_[i] << "\n";
  for (int len = 1; len <= order_; ++len) {
    const auto& d = discounts_[len - 1];
    out << "discounts " << len << ' ' << format_double(d[0]) << ' ' << format_double(d[1]) << ' '
        << format_double(d[2]) << "\n";
  }
  for (int len = 1; len <= order_; ++len) {
    const auto& level = levels_[len - 1];
    out << "level " << len << ' ' << level.size() << "\n";
    for (const auto& [gram, c] : level) {
      for (const auto w : gram) out << w << ' ';
      out << format_double(c) << "\n";
    }
  }
  out << "end\n";
}

NgramModel NgramModel::load(std::istream& in) {
  auto expect = [&](const std::string& want) {
    std::string got;
    if (!(in >> got) || got != want)
      throw DataError("ngram model: expected '" + want + "', got '" + got + "'");
  };
  NgramModel m;
  expect("wordorder-ngram");
  int version = 0;
  in >> version;
  if (version != 1) throw DataError("ngram model: unsupported version " + std::to_string(version));
  expect("order");
  in >> m.order_;
  expect("min_count");
  in >> m.min_count_;
  expect("words");
  std::size_t n_words = 0;
  in >> n_words;
  if (!in || m.order_ < 1 || m.order_ > 5) throw DataError("ngram model: bad header");
  m.words_ = {std::string(kUnkToken), std::string(kBosToken), std::string(kEosToken)};
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; i < n_words; ++i) {
    if (!std::getline(in, line)) throw DataError("ngram model: truncated vocabulary");
    m.words_.push_back(line);
  }
  for (WordId i = 0; i < m.words_.size(); ++i) m.word_ids_.emplace(m.words_[i], i);
  m.discounts_.resize(m.order_);
  for (int len = 1; len <= m.order_; ++len) {
    expect("discounts");
    int l = 0;
    std::string a, b, c;
    in >> l >> a >> b >> c;
    if (l != len) throw DataError("ngram model: discount levels out of order");
    m.discounts_[len - 1] = {parse_double(a), parse_double(b), parse_double(c)};
  }
  std::vector<std::vector<std::pair<std::vector<WordId>, double>>> levels(m.order_);
  for (int len = 1; len <= m.order_; ++len) {
    expect("level");
    int l = 0;
    std::size_t n = 0;
    in >> l >> n;
    if (l != len) throw DataError("ngram model: levels out of order");
    levels[len - 1].reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<WordId> gram(len);
      for (auto& w : gram) {
        in >> w;
        if (w >= m.words_.size()) throw DataError("ngram model: word id out of range");
      }
      std::string count;
      in >> count;
      levels[len - 1].emplace_back(std::move(gram), parse_double(count));
    }
  }
  expect("end");
  m.index_counts(levels);
  return m;
}

}  // namespace wordorder
