#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wordorder/providers.hpp"

namespace wordorder {

inline constexpr int kProtocolVersion = 1;

enum class Transport { kSubprocess, kTcp };
enum class Capability { kLogpSentence, kLogpCond, kClassify };

std::string_view to_string(Capability c);
Capability parse_capability(std::string_view name);
Transport parse_transport(std::string_view name);

class ProtocolError : public std::runtime_error {
 public:
  enum class Kind { kHandshake, kVersion, kCapability, kTimeout, kMalformed, kClosed, kRemote };
  ProtocolError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct ScorerConfig {
  Transport transport = Transport::kSubprocess;
  std::vector<std::string> command;  // argv of the scorer process
  std::string host = "127.0.0.1";
  int port = 0;
  std::chrono::milliseconds timeout{30000};
  std::size_t max_in_flight = 64;
  std::set<Capability> use;  // ops to route to the scorer; empty means all it declares

  bool configured() const {
    return transport == Transport::kTcp ? port > 0 : !command.empty();
  }
};

struct ScoreRequest {
  Capability op = Capability::kLogpSentence;
  Tokens tokens;     // logp_sentence / classify input, logp_cond target
  Tokens condition;  // logp_cond
  std::vector<std::string> labels;
};

struct ScoreResponse {
  double logp2 = 0.0;
  std::string label;
};

class Channel;

/// Client for one scorer process or socket. Requests are pipelined with
/// explicit ids; responses may arrive in any order. A request that times out
/// is resent once under a fresh id, and a late reply to the old id is dropped.
class ScorerHandle {
 public:
  static std::unique_ptr<ScorerHandle> open(const ScorerConfig& config);
  ~ScorerHandle();
  ScorerHandle(const ScorerHandle&) = delete;
  ScorerHandle& operator=(const ScorerHandle&) = delete;

  const std::set<Capability>& capabilities() const { return caps_; }
  bool has(Capability c) const { return caps_.contains(c); }
  Transport transport() const { return transport_; }

  double logp_sentence(std::span<const Token> tokens);
  double logp_cond(std::span<const Token> target, std::span<const Token> condition);
  std::string classify(std::span<const Token> tokens, std::span<const std::string> labels);

  /// Responses in request order.
  std::vector<ScoreResponse> score_batch(std::span<const ScoreRequest> requests);

  std::size_t retries() const { return retries_; }
  std::size_t discarded() const { return discarded_; }

 private:
  ScorerHandle(std::unique_ptr<Channel> channel, const ScorerConfig& config);
  void handshake();

  std::unique_ptr<Channel> channel_;
  Transport transport_;
  std::chrono::milliseconds timeout_;
  std::size_t window_;
  std::set<Capability> caps_;
  std::uint64_t next_id_ = 1;
  std::set<std::uint64_t> stale_;  // ids whose replies are dropped on arrival
  std::size_t retries_ = 0;
  std::size_t discarded_ = 0;
  std::mutex mutex_;
};

class ExternalSentenceScorer final : public SentenceScorer {
 public:
  explicit ExternalSentenceScorer(std::shared_ptr<ScorerHandle> handle) : handle_(std::move(handle)) {}
  double logp_sentence(std::span<const Token> tokens) override { return handle_->logp_sentence(tokens); }

 private:
  std::shared_ptr<ScorerHandle> handle_;
};

class ExternalConditionalScorer final : public ConditionalScorer {
 public:
  explicit ExternalConditionalScorer(std::shared_ptr<ScorerHandle> handle) : handle_(std::move(handle)) {}
  double logp_cond(std::span<const Token> target, std::span<const Token> condition) override {
    return handle_->logp_cond(target, condition);
  }

 private:
  std::shared_ptr<ScorerHandle> handle_;
};

class ExternalClassifier final : public Classifier {
 public:
  explicit ExternalClassifier(std::shared_ptr<ScorerHandle> handle) : handle_(std::move(handle)) {}
  std::string classify(std::span<const Token> tokens, std::span<const std::string> labels) override {
    return handle_->classify(tokens, labels);
  }

 private:
  std::shared_ptr<ScorerHandle> handle_;
};

enum class ProviderSource { kInternal, kExternal };

struct Providers {
  std::shared_ptr<SentenceScorer> sentence;
  std::shared_ptr<ConditionalScorer> conditional;
  std::shared_ptr<Classifier> classifier;  // may be null
  ProviderSource sentence_source = ProviderSource::kInternal;
  ProviderSource conditional_source = ProviderSource::kInternal;
  ProviderSource classifier_source = ProviderSource::kInternal;
  std::shared_ptr<ScorerHandle> handle;  // set when any provider is external
};

/// Each op goes to the scorer when one is configured and it declares the
/// op (and config.use allows it); otherwise the internal provider is kept.
Providers fallback_resolve(const ScorerConfig& config, Providers internal);

}  // namespace wordorder
