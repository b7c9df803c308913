#include <cmath>

#include "ddr/adapter.hpp"
#include "ddr/errors.hpp"
#include "ddr/util.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace ddr;
using namespace ddr::protocol;

namespace {

ToyPolicy random_policy(std::uint64_t seed) {
  Rng rng(seed);
  const auto vocab = Vocab::build(std::vector<std::string>{"alpha beta gamma delta eps zeta eta theta iota kappa"});
  ToyPolicyParams p(vocab.size(), 0.7);
  for (auto& w : p.W) w = rng.normal();
  for (TokenId v = 3; v < static_cast<TokenId>(vocab.size()); ++v) p.at(v, Vocab::kEos) += 1.0;
  return ToyPolicy(vocab, p);
}

std::string random_prompt(Rng& rng) {
  static const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "eps", "zeta",
                                                 "eta",   "theta", "iota", "kappa", "unknown"};
  std::string out;
  const auto n = 1 + rng.below(8);
  for (std::size_t i = 0; i < n; ++i) out += (i ? (rng.below(4) == 0 ? "\n" : " ") : "") + words[rng.below(words.size())];
  return out;
}

}  // namespace

TEST_CASE("request validation") {
  CHECK_THROWS_AS((GenerateRequest{"p", -0.1, 5, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((GenerateRequest{"p", 0.5, 0, 0}.validate()), std::invalid_argument);
  CHECK_NOTHROW((GenerateRequest{"p", 0.0, 1, 0}.validate()));
  CHECK_THROWS_AS((LogprobRequest{"p", "  "}.validate()), std::invalid_argument);
}

TEST_CASE("protocol encodes the documented field order") {
  CHECK(encode_request(GenerateRequest{"hi", 0.5, 8, 3}) ==
        R"({"op":"generate","prompt":"hi","temperature":0.5,"max_tokens":8,"seed":3})");
  CHECK(encode_request(LogprobRequest{"p", "c"}) == R"({"op":"logprob","prompt":"p","completion":"c"})");
  CHECK(encode_reply(TextReply{"x"}) == R"({"text":"x"})");
  CHECK(encode_reply(ErrorReply{"boom"}) == R"({"error":"boom"})");
  CHECK(encode_reply(LogprobResult{-1.5, {-0.5, -1.0}}) == R"({"logprob":-1.5,"token_logprobs":[-0.5,-1.0]})");
}

TEST_CASE("protocol round-trips random messages exactly") {
  Rng rng(31);
  for (int i = 0; i < 500; ++i) {
    std::string prompt = random_prompt(rng);
    if (i % 7 == 0) prompt += " \"quoted\" \\ \t tab \xc3\xa9";
    const GenerateRequest g{prompt, rng.uniform() * 2.0, 1 + static_cast<int>(rng.below(200)), rng.next_u64()};
    CHECK(std::get<GenerateRequest>(decode_request(encode_request(g))) == g);
    const LogprobRequest l{prompt, random_prompt(rng)};
    CHECK(std::get<LogprobRequest>(decode_request(encode_request(l))) == l);
    const LogprobResult r{-rng.uniform() * 50.0, {-rng.uniform(), -rng.uniform() * 1e-12, -rng.uniform() * 1e9}};
    CHECK(std::get<LogprobResult>(decode_reply(encode_reply(r))) == r);
    CHECK(std::get<TextReply>(decode_reply(encode_reply(TextReply{prompt}))).text == prompt);
  }
}

TEST_CASE("malformed messages raise transport errors carrying the raw line") {
  for (const std::string bad : {"not json", "[1,2]", R"({"op":"dance"})", R"({"op":"generate","prompt":"p"})",
                                R"({"op":"generate","prompt":"p","temperature":0,"max_tokens":1,"seed":1,"x":1})",
                                R"({"op":"generate","prompt":"p","temperature":"hot","max_tokens":1,"seed":1})",
                                R"({"op":"generate","prompt":"p","temperature":0,"max_tokens":1,"seed":-1})"}) {
    try {
      decode_request(bad);
      FAIL("accepted " << bad);
    } catch (const TransportError& e) {
      CHECK(e.payload() == bad);
    }
  }
  CHECK_THROWS_AS(decode_reply(R"({"text":"a","extra":1})"), TransportError);
  CHECK_THROWS_AS(decode_reply(R"({"logprob":"x","token_logprobs":[]})"), TransportError);
  CHECK_THROWS_AS(decode_reply(R"({})"), TransportError);
}

TEST_CASE("handle_line: echo stub and error replies") {
  CHECK(handle_line(nullptr, encode_request(GenerateRequest{"first\nsecond line", 0.0, 4, 0})) ==
        R"({"text":"second line"})");
  const auto lp = decode_reply(handle_line(nullptr, encode_request(LogprobRequest{"p", "c"})));
  REQUIRE(std::holds_alternative<ErrorReply>(lp));
  CHECK(std::get<ErrorReply>(lp).error.starts_with(kUnsupported));
  CHECK(std::holds_alternative<ErrorReply>(decode_reply(handle_line(nullptr, "{{{"))));
  const auto policy = random_policy(1);
  CHECK(std::holds_alternative<ErrorReply>(
      decode_reply(handle_line(&policy, encode_request(LogprobRequest{"p", " "})))));
}

TEST_CASE("in-process adapter delegates to the policy") {
  const auto policy = std::make_shared<const ToyPolicy>(random_policy(2));
  InProcessAdapter adapter(policy);
  CHECK(adapter.generate({"alpha beta", 0.0, 10, 0}) == policy->greedy_decode("alpha beta", 10));
  CHECK(adapter.generate({"alpha beta", 0.7, 10, 9}) == policy->sample("alpha beta", 0.7, 10, 9));
  const auto r = adapter.logprob({"alpha beta", "gamma delta"});
  CHECK(std::abs(r.logprob - policy->sequence_logprob("alpha beta", "gamma delta")) <= 1e-12);
  CHECK(r.token_logprobs.size() == 3);
  CHECK(adapter.toy_policy() == policy.get());
}

#ifdef DDR_PEER_PATH

TEST_CASE("external toy peer matches the in-process adapter") {
  ddr::testing::TempDir dir;
  const auto policy = std::make_shared<const ToyPolicy>(random_policy(3));
  save_checkpoint(dir / "p.ckpt", *policy);
  InProcessAdapter local(policy);
  ExternalAdapter remote({DDR_PEER_PATH, "--checkpoint", (dir / "p.ckpt").string()});
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto prompt = random_prompt(rng);
    const GenerateRequest g{prompt, i % 2 ? 0.0 : 0.5 + 0.1 * static_cast<double>(i % 5), 1 + static_cast<int>(rng.below(20)),
                            rng.next_u64()};
    CHECK(remote.generate(g) == local.generate(g));
    const LogprobRequest l{prompt, random_prompt(rng)};
    const auto a = remote.logprob(l);
    const auto b = local.logprob(l);
    CHECK(std::abs(a.logprob - b.logprob) <= 1e-9);
    CHECK(a.token_logprobs.size() == b.token_logprobs.size());
  }
}

TEST_CASE("external echo peer: text replies in order, logprob is a capability error") {
  ExternalAdapter echo({DDR_PEER_PATH, "--echo"});
  for (int i = 0; i < 1000; ++i) {
    const auto prompt = "header\nline " + std::to_string(i);
    REQUIRE(echo.generate({prompt, 0.0, 4, 0}) == "line " + std::to_string(i));
  }
  CHECK_THROWS_AS(echo.logprob({"p", "c"}), CapabilityError);
  // malformed input gets one error reply and the peer keeps serving
  CHECK(decode_reply(echo.roundtrip("garbage")).index() == 2);
  CHECK(echo.generate({"still alive", 0.0, 4, 0}) == "still alive");
}

#endif

TEST_CASE("malformed peer replies are transport errors") {
  ExternalAdapter liar({"/bin/sh", "-c", "while read l; do echo not-json; done"});
  try {
    liar.generate({"p", 0.0, 4, 0});
    FAIL("no error");
  } catch (const TransportError& e) {
    CHECK(e.payload() == "not-json");
  }
}

TEST_CASE("peer error replies map to transport errors") {
  ExternalAdapter failing({"/bin/sh", "-c", R"(while read l; do echo '{"error":"out of memory"}'; done)"});
  CHECK_THROWS_AS(failing.generate({"p", 0.0, 4, 0}), TransportError);
}

TEST_CASE("silent or exiting peers time out or fail") {
  ExternalAdapter silent({"/bin/sh", "-c", "sleep 5"}, std::chrono::milliseconds(200));
  CHECK_THROWS_AS(silent.generate({"p", 0.0, 4, 0}), TransportError);
  ExternalAdapter gone({"/bin/sh", "-c", "exit 0"}, std::chrono::milliseconds(2000));
  CHECK_THROWS_AS(gone.generate({"p", 0.0, 4, 0}), TransportError);
  ExternalAdapter missing({"/nonexistent/peer"}, std::chrono::milliseconds(2000));
  CHECK_THROWS_AS(missing.generate({"p", 0.0, 4, 0}), TransportError);
}
