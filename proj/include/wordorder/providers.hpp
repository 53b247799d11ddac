#pragma once

#include <memory>
#include <span>
#include <string>

#include "wordorder/ngram.hpp"
#include "wordorder/reorder.hpp"

namespace wordorder {

/// Source of log2 p(s).
class SentenceScorer {
 public:
  virtual ~SentenceScorer() = default;
  virtual double logp_sentence(std::span<const Token> tokens) = 0;
};

/// Source of log2 q(target | condition).
class ConditionalScorer {
 public:
  virtual ~ConditionalScorer() = default;
  virtual double logp_cond(std::span<const Token> target, std::span<const Token> condition) = 0;
};

/// Source of f(x): a label drawn from the offered label set.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::string classify(std::span<const Token> tokens, std::span<const std::string> labels) = 0;
};

class NgramSentenceScorer final : public SentenceScorer {
 public:
  explicit NgramSentenceScorer(std::shared_ptr<const NgramModel> lm) : lm_(std::move(lm)) {}
  double logp_sentence(std::span<const Token> tokens) override { return lm_->logp_sentence(tokens); }

 private:
  std::shared_ptr<const NgramModel> lm_;
};

class ReorderConditionalScorer final : public ConditionalScorer {
 public:
  explicit ReorderConditionalScorer(ReorderModel model) : model_(std::move(model)) {}
  double logp_cond(std::span<const Token> target, std::span<const Token> condition) override {
    return model_.q_logp(target, condition);
  }

 private:
  ReorderModel model_;
};

}  // namespace wordorder
