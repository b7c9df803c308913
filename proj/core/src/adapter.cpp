#include "ddr/adapter.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>

#include "ddr/errors.hpp"
#include "json.hpp"

namespace ddr {

using ojson = nlohmann::ordered_json;

void GenerateRequest::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature))
    throw std::invalid_argument("temperature must be >= 0");
  if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
}

void LogprobRequest::validate() const {
  if (completion.find_first_not_of(" \t\r\n\f\v") == std::string::npos)
    throw std::invalid_argument("completion must be non-empty");
}

namespace protocol {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

ojson parse_object(std::string_view line) {
  ojson obj;
  try {
    obj = ojson::parse(line);
  } catch (const ojson::parse_error& e) {
    throw TransportError(std::string("malformed message: ") + e.what(), std::string(line));
  }
  if (!obj.is_object()) throw TransportError("message is not an object", std::string(line));
  return obj;
}

template <class T>
T field(const ojson& obj, const char* name, std::string_view line) {
  auto it = obj.find(name);
  if (it == obj.end())
    throw TransportError(std::string("missing field '") + name + "'", std::string(line));
  try {
    return it->get<T>();
  } catch (const ojson::exception&) {
    throw TransportError(std::string("bad type for field '") + name + "'", std::string(line));
  }
}

void expect_keys(const ojson& obj, std::initializer_list<const char*> keys, std::string_view line) {
  if (obj.size() != keys.size())
    throw TransportError("unexpected fields in message", std::string(line));
  for (const char* k : keys)
    if (!obj.contains(k)) throw TransportError(std::string("missing field '") + k + "'", std::string(line));
}

}  // namespace

std::string encode_request(const Request& request) {
  ojson obj;
  std::visit(overloaded{
                 [&](const GenerateRequest& g) {
                   obj["op"] = "generate";
                   obj["prompt"] = g.prompt;
                   obj["temperature"] = g.temperature;
                   obj["max_tokens"] = g.max_tokens;
                   obj["seed"] = g.seed;
                 },
                 [&](const LogprobRequest& l) {
                   obj["op"] = "logprob";
                   obj["prompt"] = l.prompt;
                   obj["completion"] = l.completion;
                 },
             },
             request);
  return obj.dump();
}

std::string encode_reply(const Reply& reply) {
  ojson obj;
  std::visit(overloaded{
                 [&](const TextReply& t) { obj["text"] = t.text; },
                 [&](const LogprobResult& l) {
                   obj["logprob"] = l.logprob;
                   obj["token_logprobs"] = l.token_logprobs;
                 },
                 [&](const ErrorReply& e) { obj["error"] = e.error; },
             },
             reply);
  return obj.dump();
}

Request decode_request(std::string_view line) {
  const auto obj = parse_object(line);
  const auto op = field<std::string>(obj, "op", line);
  if (op == "generate") {
    expect_keys(obj, {"op", "prompt", "temperature", "max_tokens", "seed"}, line);
    if (!obj["temperature"].is_number() || !obj["max_tokens"].is_number_integer() ||
        !obj["seed"].is_number_unsigned())
      throw TransportError("bad numeric field in generate request", std::string(line));
    GenerateRequest g{field<std::string>(obj, "prompt", line), field<double>(obj, "temperature", line),
                      field<int>(obj, "max_tokens", line), field<std::uint64_t>(obj, "seed", line)};
    return g;
  }
  if (op == "logprob") {
    expect_keys(obj, {"op", "prompt", "completion"}, line);
    return LogprobRequest{field<std::string>(obj, "prompt", line),
                          field<std::string>(obj, "completion", line)};
  }
  throw TransportError("unknown op '" + op + "'", std::string(line));
}

Reply decode_reply(std::string_view line) {
  const auto obj = parse_object(line);
  if (obj.contains("error")) {
    expect_keys(obj, {"error"}, line);
    return ErrorReply{field<std::string>(obj, "error", line)};
  }
  if (obj.contains("text")) {
    expect_keys(obj, {"text"}, line);
    return TextReply{field<std::string>(obj, "text", line)};
  }
  if (obj.contains("logprob")) {
    expect_keys(obj, {"logprob", "token_logprobs"}, line);
    if (!obj["logprob"].is_number())
      throw TransportError("bad type for field 'logprob'", std::string(line));
    return LogprobResult{field<double>(obj, "logprob", line),
                         field<std::vector<double>>(obj, "token_logprobs", line)};
  }
  throw TransportError("unrecognized reply", std::string(line));
}

std::string handle_line(const ToyPolicy* policy, std::string_view line) {
  try {
    const auto request = decode_request(line);
    if (const auto* g = std::get_if<GenerateRequest>(&request)) {
      g->validate();
      if (!policy) {
        // echo stub: the prompt's last line
        auto pos = g->prompt.find_last_of('\n');
        return encode_reply(TextReply{pos == std::string::npos ? g->prompt : g->prompt.substr(pos + 1)});
      }
      InProcessAdapter adapter(std::shared_ptr<const ToyPolicy>(policy, [](const ToyPolicy*) {}));
      return encode_reply(TextReply{adapter.generate(*g)});
    }
    const auto& l = std::get<LogprobRequest>(request);
    if (!policy) return encode_reply(ErrorReply{std::string(kUnsupported) + ": logprob"});
    l.validate();
    InProcessAdapter adapter(std::shared_ptr<const ToyPolicy>(policy, [](const ToyPolicy*) {}));
    return encode_reply(adapter.logprob(l));
  } catch (const std::exception& e) {
    return encode_reply(ErrorReply{e.what()});
  }
}

}  // namespace protocol

// ---------------------------------------------------------------------------

InProcessAdapter::InProcessAdapter(std::shared_ptr<const ToyPolicy> policy)
    : policy_(std::move(policy)) {
  if (!policy_) throw std::invalid_argument("null policy");
}

std::string InProcessAdapter::generate(const GenerateRequest& request) {
  request.validate();
  if (request.temperature == 0.0) return policy_->greedy_decode(request.prompt, request.max_tokens);
  return policy_->sample(request.prompt, request.temperature, request.max_tokens, request.seed);
}

LogprobResult InProcessAdapter::logprob(const LogprobRequest& request) {
  request.validate();
  LogprobResult out;
  out.logprob = policy_->sequence_logprob(request.prompt, request.completion, &out.token_logprobs);
  return out;
}

// ---------------------------------------------------------------------------

ExternalAdapter::ExternalAdapter(std::vector<std::string> command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
  if (command_.empty()) throw std::invalid_argument("empty adapter command");
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0) throw TransportError(std::string("pipe: ") + std::strerror(errno));
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw TransportError(std::string("pipe: ") + std::strerror(errno));
  }
  pid_ = fork();
  if (pid_ < 0) throw TransportError(std::string("fork: ") + std::strerror(errno));
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    std::vector<char*> argv;
    for (auto& arg : command_) argv.push_back(arg.data());
    argv.push_back(nullptr);
    execvp(argv[0], argv.data());
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  fcntl(to_child_, F_SETFD, FD_CLOEXEC);
  fcntl(from_child_, F_SETFD, FD_CLOEXEC);
  signal(SIGPIPE, SIG_IGN);
}

ExternalAdapter::~ExternalAdapter() { shutdown(); }

void ExternalAdapter::shutdown() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    // give the peer a moment to exit on EOF before forcing it
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      usleep(10000);
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

std::string ExternalAdapter::describe() const {
  std::string out = "external(";
  for (std::size_t i = 0; i < command_.size(); ++i) out += (i ? " " : "") + command_[i];
  return out + ")";
}

std::string ExternalAdapter::read_line() {
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  while (true) {
    if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
      std::string line = buffer_.substr(0, pos);
      buffer_.erase(0, pos + 1);
      return line;
    }
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) throw TransportError("adapter timed out", buffer_);
    pollfd pfd{from_child_, POLLIN, 0};
    const int rc = poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) throw TransportError(std::string("poll: ") + std::strerror(errno), buffer_);
    if (rc == 0) throw TransportError("adapter timed out", buffer_);
    char chunk[4096];
    const ssize_t got = read(from_child_, chunk, sizeof chunk);
    if (got < 0 && errno == EINTR) continue;
    if (got <= 0) throw TransportError("adapter closed its output stream", buffer_);
    buffer_.append(chunk, static_cast<std::size_t>(got));
  }
}

std::string ExternalAdapter::roundtrip(const std::string& line) {
  std::lock_guard lock(mutex_);
  if (to_child_ < 0) throw TransportError("adapter is not running");
  std::string payload = line + "\n";
  std::size_t off = 0;
  while (off < payload.size()) {
    const ssize_t wrote = write(to_child_, payload.data() + off, payload.size() - off);
    if (wrote < 0 && errno == EINTR) continue;
    if (wrote <= 0) throw TransportError(std::string("write to adapter failed: ") + std::strerror(errno));
    off += static_cast<std::size_t>(wrote);
  }
  return read_line();
}

protocol::Reply ExternalAdapter::call(const protocol::Request& request) {
  const std::string raw = roundtrip(protocol::encode_request(request));
  return protocol::decode_reply(raw);
}

std::string ExternalAdapter::generate(const GenerateRequest& request) {
  request.validate();
  auto reply = call(request);
  if (auto* t = std::get_if<protocol::TextReply>(&reply)) return t->text;
  if (auto* e = std::get_if<protocol::ErrorReply>(&reply)) {
    if (e->error.starts_with(protocol::kUnsupported)) throw CapabilityError(e->error);
    throw TransportError("adapter error: " + e->error, protocol::encode_reply(reply));
  }
  throw TransportError("generate answered with a logprob reply", protocol::encode_reply(reply));
}

LogprobResult ExternalAdapter::logprob(const LogprobRequest& request) {
  request.validate();
  auto reply = call(request);
  if (auto* l = std::get_if<LogprobResult>(&reply)) return *l;
  if (auto* e = std::get_if<protocol::ErrorReply>(&reply)) {
    if (e->error.starts_with(protocol::kUnsupported)) throw CapabilityError(e->error);
    throw TransportError("adapter error: " + e->error, protocol::encode_reply(reply));
  }
  throw TransportError("logprob answered with a text reply", protocol::encode_reply(reply));
}

}  // namespace ddr
