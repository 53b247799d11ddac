#include "wordorder/scorer.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <map>
#include <thread>

#include "json.hpp"

extern char** environ;

namespace wordorder {

using json = nlohmann::json;
using Kind = ProtocolError::Kind;

std::string_view to_string(Capability c) {
  switch (c) {
    case Capability::kLogpSentence:
      return "logp_sentence";
    case Capability::kLogpCond:
      return "logp_cond";
    case Capability::kClassify:
      return "classify";
  }
  return "?";
}

Capability parse_capability(std::string_view name) {
  if (name == "logp_sentence") return Capability::kLogpSentence;
  if (name == "logp_cond") return Capability::kLogpCond;
  if (name == "classify") return Capability::kClassify;
  throw UsageError("unknown scorer capability: " + std::string(name));
}

Transport parse_transport(std::string_view name) {
  if (name == "stdio" || name == "subprocess") return Transport::kSubprocess;
  if (name == "tcp") return Transport::kTcp;
  throw UsageError("unknown scorer transport: " + std::string(name));
}

// Line-oriented duplex byte stream.
class Channel {
 public:
  Channel(int read_fd, int write_fd) : rfd_(read_fd), wfd_(write_fd) {}
  virtual ~Channel() = default;

  void write_line(const std::string& line) {
    std::string buf = line + '\n';
    std::size_t off = 0;
    while (off < buf.size()) {
      const ssize_t n = send_bytes(buf.data() + off, buf.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(Kind::kClosed, std::string("scorer write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  /// nullopt on timeout; throws kClosed at end of stream.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      pollfd p{rfd_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left.count()));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(Kind::kClosed, std::string("scorer poll failed: ") + std::strerror(errno));
      }
      if (r == 0) return std::nullopt;
      char chunk[65536];
      const ssize_t n = ::read(rfd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw ProtocolError(Kind::kClosed, std::string("scorer read failed: ") + std::strerror(errno));
      }
      if (n == 0) throw ProtocolError(Kind::kClosed, "scorer closed the stream");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 protected:
  virtual ssize_t send_bytes(const char* data, std::size_t n) = 0;
  int rfd_;
  int wfd_;

 private:
  std::string buffer_;
};

namespace {

class PipeChannel final : public Channel {
 public:
  PipeChannel(pid_t pid, int read_fd, int write_fd) : Channel(read_fd, write_fd), pid_(pid) {}
  ~PipeChannel() override {
    ::close(wfd_);
    for (int i = 0; i < 100; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) != 0) {
        ::close(rfd_);
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    ::close(rfd_);
  }

 protected:
  ssize_t send_bytes(const char* data, std::size_t n) override { return ::write(wfd_, data, n); }

 private:
  pid_t pid_;
};

class SocketChannel final : public Channel {
 public:
  explicit SocketChannel(int fd) : Channel(fd, fd) {}
  ~SocketChannel() override { ::close(rfd_); }

 protected:
  ssize_t send_bytes(const char* data, std::size_t n) override { return ::send(wfd_, data, n, MSG_NOSIGNAL); }
};

std::unique_ptr<Channel> spawn(const std::vector<std::string>& command) {
  if (command.empty()) throw UsageError("scorer command is empty");
  // A scorer that dies mid-write must surface as an error, not kill us.
  static const bool ignore_sigpipe = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)ignore_sigpipe;

  int to_child[2], from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw ProtocolError(Kind::kHandshake, "pipe failed");
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw ProtocolError(Kind::kHandshake, "pipe failed");
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);

  std::vector<char*> argv;
  for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = 0;
  const int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(to_child[0]);
  ::close(from_child[1]);
  if (rc != 0) {
    ::close(to_child[1]);
    ::close(from_child[0]);
    throw ProtocolError(Kind::kHandshake, "cannot start scorer " + command[0] + ": " + std::strerror(rc));
  }
  return std::make_unique<PipeChannel>(pid, from_child[0], to_child[1]);
}

std::unique_ptr<Channel> connect_tcp(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || !res)
    throw ProtocolError(Kind::kHandshake, "cannot resolve scorer host " + host);
  int fd = -1;
  for (addrinfo* a = res; a; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw ProtocolError(Kind::kHandshake, "cannot connect to scorer at " + host + ":" + service);
  return std::make_unique<SocketChannel>(fd);
}

json request_json(std::uint64_t id, const ScoreRequest& r) {
  json j = {{"id", id}, {"op", to_string(r.op)}};
  switch (r.op) {
    case Capability::kLogpSentence:
      j["tokens"] = r.tokens;
      break;
    case Capability::kLogpCond:
      j["target"] = r.tokens;
      j["condition"] = r.condition;
      break;
    case Capability::kClassify:
      j["tokens"] = r.tokens;
      j["labels"] = r.labels;
      break;
  }
  return j;
}

[[noreturn]] void malformed(const std::string& why, const std::string& line) {
  throw ProtocolError(Kind::kMalformed, "malformed scorer response (" + why + "): " + line);
}

ScoreResponse decode(const json& j, const ScoreRequest& r, const std::string& line) {
  ScoreResponse out;
  if (r.op == Capability::kClassify) {
    auto it = j.find("label");
    if (it == j.end() || !it->is_string()) malformed("missing label", line);
    out.label = it->get<std::string>();
    if (std::find(r.labels.begin(), r.labels.end(), out.label) == r.labels.end())
      malformed("label not in the offered set", line);
  } else {
    auto it = j.find("logp2");
    if (it == j.end() || !it->is_number()) malformed("missing logp2", line);
    out.logp2 = it->get<double>();
    if (!std::isfinite(out.logp2) || out.logp2 > 0.0) malformed("logp2 must be finite and <= 0", line);
  }
  return out;
}

}  // namespace

std::unique_ptr<ScorerHandle> ScorerHandle::open(const ScorerConfig& config) {
  if (!config.configured()) throw UsageError("no scorer endpoint configured");
  if (config.timeout.count() <= 0) throw UsageError("scorer timeout must be positive");
  std::unique_ptr<Channel> ch = config.transport == Transport::kTcp ? connect_tcp(config.host, config.port)
                                                                     : spawn(config.command);
  std::unique_ptr<ScorerHandle> h(new ScorerHandle(std::move(ch), config));
  h->handshake();
  return h;
}

ScorerHandle::ScorerHandle(std::unique_ptr<Channel> channel, const ScorerConfig& config)
    : channel_(std::move(channel)),
      transport_(config.transport),
      timeout_(config.timeout),
      window_(std::max<std::size_t>(1, config.max_in_flight)) {}

ScorerHandle::~ScorerHandle() = default;

void ScorerHandle::handshake() {
  try {
    channel_->write_line(json{{"op", "hello"}, {"version", kProtocolVersion}}.dump());
    auto line = channel_->read_line(timeout_);
    if (!line) throw ProtocolError(Kind::kHandshake, "scorer handshake timed out");
    json j;
    try {
      j = json::parse(*line);
    } catch (const json::exception&) {
      throw ProtocolError(Kind::kHandshake, "scorer handshake is not JSON: " + *line);
    }
    if (!j.is_object()) throw ProtocolError(Kind::kHandshake, "scorer handshake is not an object: " + *line);
    if (auto v = j.find("version"); v != j.end() && v->is_number_integer() && v->get<int>() != kProtocolVersion)
      throw ProtocolError(Kind::kVersion, "scorer speaks protocol version " + std::to_string(v->get<int>()) +
                                              ", expected " + std::to_string(kProtocolVersion));
    if (j.value("ok", false) != true) throw ProtocolError(Kind::kHandshake, "scorer refused handshake: " + *line);
    auto v = j.find("version");
    if (v == j.end() || !v->is_number_integer()) throw ProtocolError(Kind::kHandshake, "handshake lacks version");
    auto caps = j.find("capabilities");
    if (caps == j.end() || !caps->is_array()) throw ProtocolError(Kind::kHandshake, "handshake lacks capabilities");
    for (const auto& c : *caps) {
      if (!c.is_string()) throw ProtocolError(Kind::kHandshake, "capability is not a string");
      try {
        caps_.insert(parse_capability(c.get<std::string>()));
      } catch (const UsageError&) {
        // unknown ops are ignored
      }
    }
  } catch (const ProtocolError& e) {
    if (e.kind() == Kind::kClosed) throw ProtocolError(Kind::kHandshake, std::string("handshake failed: ") + e.what());
    throw;
  }
}

std::vector<ScoreResponse> ScorerHandle::score_batch(std::span<const ScoreRequest> requests) {
  std::lock_guard lock(mutex_);
  for (const auto& r : requests)
    if (!has(r.op))
      throw ProtocolError(Kind::kCapability, "scorer did not declare capability " + std::string(to_string(r.op)));

  struct Pending {
    std::size_t index;
    int attempt;
  };
  std::vector<ScoreResponse> out(requests.size());
  std::map<std::uint64_t, Pending> pending;
  std::size_t next = 0, done = 0;

  auto send = [&](std::size_t index, int attempt) {
    const std::uint64_t id = next_id_++;
    channel_->write_line(request_json(id, requests[index]).dump());
    pending.emplace(id, Pending{index, attempt});
  };

  while (done < requests.size()) {
    while (next < requests.size() && pending.size() < window_) send(next++, 0);
    const auto line = channel_->read_line(timeout_);
    if (!line) {
      std::vector<Pending> expired;
      for (const auto& [id, p] : pending) {
        stale_.insert(id);
        if (p.attempt > 0) {
          for (const auto& rest : pending) stale_.insert(rest.first);
          throw ProtocolError(Kind::kTimeout, "scorer timed out twice on request " + std::to_string(p.index));
        }
        expired.push_back(p);
      }
      pending.clear();
      for (const auto& p : expired) {
        ++retries_;
        send(p.index, 1);
      }
      continue;
    }
    json j;
    try {
      j = json::parse(*line);
    } catch (const json::exception&) {
      malformed("not JSON", *line);
    }
    if (!j.is_object()) malformed("not an object", *line);
    auto idv = j.find("id");
    if (idv == j.end() || !idv->is_number_unsigned()) malformed("missing id", *line);
    const auto id = idv->get<std::uint64_t>();
    if (stale_.erase(id)) {
      ++discarded_;
      continue;
    }
    auto it = pending.find(id);
    if (it == pending.end()) malformed("unknown id", *line);
    if (auto err = j.find("error"); err != j.end()) {
      throw ProtocolError(Kind::kRemote, "scorer error on request " + std::to_string(it->second.index) + ": " +
                                             (err->is_string() ? err->get<std::string>() : err->dump()));
    }
    out[it->second.index] = decode(j, requests[it->second.index], *line);
    pending.erase(it);
    ++done;
  }
  return out;
}

double ScorerHandle::logp_sentence(std::span<const Token> tokens) {
  ScoreRequest r{Capability::kLogpSentence, Tokens(tokens.begin(), tokens.end()), {}, {}};
  return score_batch(std::span(&r, 1)).front().logp2;
}

double ScorerHandle::logp_cond(std::span<const Token> target, std::span<const Token> condition) {
  ScoreRequest r{Capability::kLogpCond, Tokens(target.begin(), target.end()),
                 Tokens(condition.begin(), condition.end()), {}};
  return score_batch(std::span(&r, 1)).front().logp2;
}

std::string ScorerHandle::classify(std::span<const Token> tokens, std::span<const std::string> labels) {
  if (labels.empty()) throw UsageError("classify needs at least one label");
  ScoreRequest r{Capability::kClassify, Tokens(tokens.begin(), tokens.end()), {},
                 std::vector<std::string>(labels.begin(), labels.end())};
  return score_batch(std::span(&r, 1)).front().label;
}

Providers fallback_resolve(const ScorerConfig& config, Providers internal) {
  if (!config.configured()) return internal;
  std::shared_ptr<ScorerHandle> handle = ScorerHandle::open(config);
  auto wanted = [&](Capability c) { return handle->has(c) && (config.use.empty() || config.use.contains(c)); };
  Providers out = std::move(internal);
  bool used = false;
  if (wanted(Capability::kLogpSentence)) {
    out.sentence = std::make_shared<ExternalSentenceScorer>(handle);
    out.sentence_source = ProviderSource::kExternal;
    used = true;
  }
  if (wanted(Capability::kLogpCond)) {
    out.conditional = std::make_shared<ExternalConditionalScorer>(handle);
    out.conditional_source = ProviderSource::kExternal;
    used = true;
  }
  if (wanted(Capability::kClassify)) {
    out.classifier = std::make_shared<ExternalClassifier>(handle);
    out.classifier_source = ProviderSource::kExternal;
    used = true;
  }
  if (used) out.handle = handle;
  return out;
}

}  // namespace wordorder
