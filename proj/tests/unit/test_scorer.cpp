#include <doctest.h>

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "../support/echo_protocol.hpp"
#include "wordorder/infometrics.hpp"
#include "wordorder/scorer.hpp"
#include "wordorder/textdata.hpp"

using namespace wordorder;
using Kind = ProtocolError::Kind;

namespace {

ScorerConfig echo_config(std::vector<std::string> extra = {}) {
  ScorerConfig c;
  c.command = {ECHO_SCORER_PATH};
  c.command.insert(c.command.end(), extra.begin(), extra.end());
  c.timeout = std::chrono::milliseconds(5000);
  return c;
}

Kind failure_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const ProtocolError& e) {
    return e.kind();
  }
  FAIL("expected ProtocolError");
  return Kind::kRemote;
}

struct FixedSentence final : SentenceScorer {
  double v;
  explicit FixedSentence(double x) : v(x) {}
  double logp_sentence(std::span<const Token>) override { return v; }
};

struct HalfLength final : ConditionalScorer {
  double logp_cond(std::span<const Token> target, std::span<const Token>) override {
    return -static_cast<double>(target.size()) / 2.0;
  }
};

std::vector<SentenceRecord> fixture() {
  std::vector<SentenceRecord> out;
  const char* texts[] = {"the cat sat on the mat", "dogs bark", "a b c d", "she sold sea shells", "one"};
  int i = 0;
  for (const char* t : texts) out.push_back({"s" + std::to_string(i++), "generic", tokenize(t), Split::kProbe});
  return out;
}

std::string pmi_file(std::span<const SentenceRecord> corpus, SentenceScorer& p, ConditionalScorer& q) {
  const auto seeds = default_seeds();
  const auto scrambles = make_scramble_set(corpus, seeds);
  std::ostringstream out;
  write_pmi_records(out, compute_pmi(corpus, scrambles, p, q));
  return out.str();
}

// one-connection TCP server speaking the echo protocol
class EchoServer {
 public:
  EchoServer() {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(fd_, reinterpret_cast<sockaddr*>(&a), sizeof a);
    ::listen(fd_, 1);
    socklen_t len = sizeof a;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&a), &len);
    port_ = ntohs(a.sin_port);
    thread_ = std::thread([this] { serve(); });
  }
  ~EchoServer() {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    thread_.join();
  }
  int port() const { return port_; }

 private:
  void serve() {
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c < 0) return;
    std::string buf;
    char chunk[4096];
    for (;;) {
      const ssize_t n = ::read(c, chunk, sizeof chunk);
      if (n <= 0) break;
      buf.append(chunk, static_cast<std::size_t>(n));
      for (auto pos = buf.find('\n'); pos != std::string::npos; pos = buf.find('\n')) {
        const std::string reply = echo::respond(buf.substr(0, pos), {}) + "\n";
        buf.erase(0, pos + 1);
        ::send(c, reply.data(), reply.size(), MSG_NOSIGNAL);
      }
    }
    ::close(c);
  }
  int fd_ = -1;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("handshake declares capabilities") {
  const auto h = ScorerHandle::open(echo_config({"--caps", "logp_sentence"}));
  CHECK(h->capabilities() == std::set<Capability>{Capability::kLogpSentence});
  CHECK(h->transport() == Transport::kSubprocess);
  CHECK(h->logp_sentence(tokenize("a b c d")) == -4.0);
  const Tokens t{"a"};
  CHECK(failure_kind([&] { h->logp_cond(t, t); }) == Kind::kCapability);
  // the handle stays usable after a refused op
  CHECK(h->logp_sentence(t) == -1.0);
}

TEST_CASE("handshake failures") {
  CHECK(failure_kind([] { ScorerHandle::open(echo_config({"--version", "2"})); }) == Kind::kVersion);
  CHECK(failure_kind([] { ScorerHandle::open(echo_config({"--refuse"})); }) == Kind::kHandshake);
  ScorerConfig missing;
  missing.command = {"/nonexistent/scorer-binary"};
  CHECK(failure_kind([&] { ScorerHandle::open(missing); }) == Kind::kHandshake);
  CHECK_THROWS_AS(ScorerHandle::open(ScorerConfig{}), UsageError);
  CHECK_THROWS_AS(parse_capability("logp_word"), UsageError);
  CHECK(parse_transport("tcp") == Transport::kTcp);
  CHECK(to_string(Capability::kClassify) == "classify");
}

TEST_CASE("conformance values") {
  const auto h = ScorerHandle::open(echo_config());
  CHECK(h->capabilities().size() == 3);
  const auto four = tokenize("w x y z");
  CHECK(h->logp_sentence(four) == -4.0);
  CHECK(h->logp_cond(tokenize("a b c"), four) == -1.5);
  const std::vector<std::string> labels{"entailed", "not_entailed"};
  CHECK(h->classify(four, labels) == "entailed");
  CHECK_THROWS_AS(h->classify(four, std::vector<std::string>{}), UsageError);
}

TEST_CASE("bad responses abort loudly") {
  const std::vector<std::string> labels{"entailed", "not_entailed"};
  const Tokens t{"a", "b"};
  {
    const auto h = ScorerHandle::open(echo_config({"--bad-label"}));
    try {
      h->classify(t, labels);
      FAIL("expected malformed");
    } catch (const ProtocolError& e) {
      CHECK(e.kind() == Kind::kMalformed);
      CHECK(std::string(e.what()).find("zzz-not-offered") != std::string::npos);
    }
  }
  CHECK(failure_kind([&] { ScorerHandle::open(echo_config({"--malformed"}))->logp_sentence(t); }) ==
        Kind::kMalformed);
  CHECK(failure_kind([&] { ScorerHandle::open(echo_config({"--positive"}))->logp_sentence(t); }) ==
        Kind::kMalformed);
  CHECK(failure_kind([&] { ScorerHandle::open(echo_config({"--fixed", "nan"}))->logp_sentence(t); }) ==
        Kind::kMalformed);
  {
    const auto h = ScorerHandle::open(echo_config({"--error-token", "boom"}));
    std::vector<ScoreRequest> batch(5, ScoreRequest{Capability::kLogpSentence, {"ok"}, {}, {}});
    batch[3].tokens = {"boom"};
    try {
      h->score_batch(batch);
      FAIL("expected remote error");
    } catch (const ProtocolError& e) {
      CHECK(e.kind() == Kind::kRemote);
      CHECK(std::string(e.what()).find("request 3") != std::string::npos);
    }
  }
  CHECK(failure_kind([&] {
          const auto h = ScorerHandle::open(echo_config({"--exit-after", "2"}));
          for (int i = 0; i < 3; ++i) h->logp_sentence(t);
        }) == Kind::kClosed);
}

TEST_CASE("1000 pipelined requests come back id-matched") {
  for (const bool shuffle : {false, true}) {
    CAPTURE(shuffle);
    auto cfg = echo_config(shuffle ? std::vector<std::string>{"--shuffle"} : std::vector<std::string>{});
    cfg.max_in_flight = 64;
    const auto h = ScorerHandle::open(cfg);
    std::vector<ScoreRequest> batch;
    for (int i = 0; i < 1000; ++i) {
      ScoreRequest r;
      r.op = i % 3 == 0 ? Capability::kLogpSentence : i % 3 == 1 ? Capability::kLogpCond : Capability::kClassify;
      r.tokens = Tokens(static_cast<std::size_t>(1 + i % 17), "w");
      r.condition = {"c"};
      r.labels = {"L" + std::to_string(i), "other"};
      batch.push_back(r);
    }
    const auto out = h->score_batch(batch);
    REQUIRE(out.size() == 1000);
    for (int i = 0; i < 1000; ++i) {
      const double n = static_cast<double>(1 + i % 17);
      if (i % 3 == 0) CHECK(out[i].logp2 == -n);
      if (i % 3 == 1) CHECK(out[i].logp2 == -n / 2.0);
      if (i % 3 == 2) CHECK(out[i].label == "L" + std::to_string(i));
    }
    CHECK(h->retries() == 0);
  }
}

TEST_CASE("timeouts retry once then fail") {
  auto slow = echo_config({"--stall-first-ms", "300"});
  slow.timeout = std::chrono::milliseconds(200);
  const auto h = ScorerHandle::open(slow);
  CHECK(h->logp_sentence(tokenize("a b")) == -2.0);
  CHECK(h->retries() == 1);
  // the late answer to the first id is dropped, not mistaken for the retry
  CHECK(h->discarded() == 1);
  CHECK(h->logp_sentence(tokenize("a b c")) == -3.0);

  // replies that arrive after a failed batch are dropped by the next one
  auto slower = echo_config({"--stall-first-ms", "500"});
  slower.timeout = std::chrono::milliseconds(200);
  const auto late = ScorerHandle::open(slower);
  CHECK(failure_kind([&] { late->logp_sentence(tokenize("a")); }) == Kind::kTimeout);
  late->logp_sentence(tokenize("x"));
  CHECK(late->discarded() == 2);

  auto dead = echo_config({"--stall-always"});
  dead.timeout = std::chrono::milliseconds(100);
  CHECK(failure_kind([&] { ScorerHandle::open(dead)->logp_sentence(tokenize("a")); }) == Kind::kTimeout);
}

TEST_CASE("tcp transport") {
  EchoServer server;
  ScorerConfig c;
  c.transport = Transport::kTcp;
  c.port = server.port();
  const auto h = ScorerHandle::open(c);
  CHECK(h->transport() == Transport::kTcp);
  CHECK(h->logp_sentence(tokenize("one two three")) == -3.0);
  const std::vector<std::string> labels{"x", "y"};
  CHECK(h->classify(tokenize("q"), labels) == "x");
}

TEST_CASE("fallback resolution") {
  auto lm = std::make_shared<const NgramModel>(NgramModel::train(std::vector<Tokens>{tokenize("a b c"), tokenize("b c a")}));
  Providers internal;
  internal.sentence = std::make_shared<NgramSentenceScorer>(lm);
  internal.conditional = std::make_shared<ReorderConditionalScorer>(ReorderModel(lm));

  const auto none = fallback_resolve(ScorerConfig{}, internal);
  CHECK(none.sentence == internal.sentence);
  CHECK(none.conditional == internal.conditional);
  CHECK(!none.classifier);
  CHECK(!none.handle);

  const auto hybrid = fallback_resolve(echo_config({"--caps", "logp_sentence"}), internal);
  CHECK(hybrid.sentence_source == ProviderSource::kExternal);
  CHECK(hybrid.conditional_source == ProviderSource::kInternal);
  CHECK(hybrid.conditional == internal.conditional);
  CHECK(hybrid.sentence->logp_sentence(tokenize("a b")) == -2.0);

  const auto full = fallback_resolve(echo_config(), internal);
  CHECK(full.sentence_source == ProviderSource::kExternal);
  CHECK(full.conditional_source == ProviderSource::kExternal);
  CHECK(full.classifier_source == ProviderSource::kExternal);
  REQUIRE(full.classifier);
  CHECK(full.handle);

  auto only_q = echo_config();
  only_q.use = {Capability::kLogpCond};
  const auto limited = fallback_resolve(only_q, internal);
  CHECK(limited.sentence == internal.sentence);
  CHECK(limited.conditional_source == ProviderSource::kExternal);
  CHECK(!limited.classifier);
}

TEST_CASE("external values pass through the pmi pipeline unchanged") {
  const auto corpus = fixture();
  FixedSentence p(-10.0);
  HalfLength q;
  const auto h = std::shared_ptr<ScorerHandle>(ScorerHandle::open(echo_config({"--fixed", "-10.0", "--caps", "logp_sentence"})));
  ExternalSentenceScorer ext(h);
  CHECK(pmi_file(corpus, ext, q) == pmi_file(corpus, p, q));

  const auto seeds = default_seeds();
  const auto rows = compute_pmi(corpus, make_scramble_set(corpus, seeds), ext, q);
  CHECK(rows.size() == corpus.size() * 7);
  CHECK(rows[0].pmi_bits == -3.0 + 10.0);
}

TEST_CASE("model scorer gives byte-identical pmi files") {
  std::vector<Tokens> train;
  const char* texts[] = {"the cat sat on the mat", "the dog sat on the rug", "a cat saw the dog",
                         "she sold sea shells",    "the mat was red",        "dogs bark at cats"};
  for (int r = 0; r < 4; ++r)
    for (const char* t : texts) train.push_back(tokenize(t));
  const auto dir = std::filesystem::temp_directory_path() / ("wo_scorer_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  {
    const auto lm = std::make_shared<const NgramModel>(NgramModel::train(train, {3, 1}));
    std::ofstream(dir / "lm.txt") << [&] {
      std::ostringstream s;
      lm->save(s);
      return s.str();
    }();
    std::ofstream rf(dir / "rm.txt");
    ReorderModel(lm, 0.8).save(rf);
  }
  std::ifstream lf(dir / "lm.txt"), rf(dir / "rm.txt");
  const auto lm = std::make_shared<const NgramModel>(NgramModel::load(lf));
  NgramSentenceScorer p(lm);
  ReorderConditionalScorer q(ReorderModel::load(rf));

  ScorerConfig c;
  c.command = {MODEL_SCORER_PATH, "--lm", (dir / "lm.txt").string(), "--reorder", (dir / "rm.txt").string()};
  Providers internal{std::make_shared<NgramSentenceScorer>(lm), std::make_shared<ReorderConditionalScorer>(q), {}};
  const auto ext = fallback_resolve(c, internal);
  REQUIRE(ext.sentence_source == ProviderSource::kExternal);
  REQUIRE(ext.conditional_source == ProviderSource::kExternal);

  const auto corpus = fixture();
  const auto a = pmi_file(corpus, p, q);
  const auto b = pmi_file(corpus, *ext.sentence, *ext.conditional);
  CHECK(a == b);
  CHECK(a.size() > 100);
  std::filesystem::remove_all(dir);
}
