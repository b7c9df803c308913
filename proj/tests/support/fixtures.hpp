#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <memory>
#include <string>
#include <vector>

#include "ddr/adapter.hpp"
#include "ddr/dataset.hpp"
#include "ddr/errors.hpp"
#include "ddr/toy_policy.hpp"

namespace ddr::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ddr-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline QueryRecord make_record(std::string id, std::string query, std::vector<std::string> answers,
                               const std::vector<std::string>& doc_texts,
                               std::string task = "qa-accuracy") {
  QueryRecord r;
  r.id = std::move(id);
  r.query = std::move(query);
  r.answers = std::move(answers);
  r.task = std::move(task);
  for (std::size_t i = 0; i < doc_texts.size(); ++i)
    r.docs.push_back({r.id + "-d" + std::to_string(i + 1), doc_texts[i], static_cast<int>(i + 1), std::nullopt});
  return r;
}

/// Replies through a callback; logprob is unsupported.
class ScriptedAdapter final : public Adapter {
 public:
  using Fn = std::function<std::string(const GenerateRequest&)>;
  explicit ScriptedAdapter(Fn fn) : fn_(std::move(fn)) {}
  std::string generate(const GenerateRequest& request) override {
    ++calls;
    return fn_(request);
  }
  LogprobResult logprob(const LogprobRequest&) override { throw CapabilityError("unsupported: logprob"); }
  std::string describe() const override { return "scripted"; }

  int calls = 0;

 private:
  Fn fn_;
};

inline std::shared_ptr<ScriptedAdapter> constant_adapter(std::string text) {
  return std::make_shared<ScriptedAdapter>([text](const GenerateRequest&) { return text; });
}

/// Copies context tokens whose names start with `prefix`: W[<s>, prefix*] is
/// raised, every token is likely to be followed by </s>.
inline ToyPolicy copy_generator(const Vocab& vocab, const std::string& prefix = "ent", double w_copy = 2.0,
                                double entity_bias = 6.0, double eos_bias = 12.0) {
  ToyPolicyParams p(vocab.size(), w_copy);
  for (TokenId v = 0; v < static_cast<TokenId>(vocab.size()); ++v) {
    if (vocab.token(v).rfind(prefix, 0) == 0) p.at(Vocab::kBos, v) = entity_bias;
    if (v != Vocab::kBos) p.at(v, Vocab::kEos) = eos_bias;
  }
  return ToyPolicy(vocab, std::move(p));
}

inline std::shared_ptr<InProcessAdapter> in_process(ToyPolicy policy) {
  return std::make_shared<InProcessAdapter>(std::make_shared<const ToyPolicy>(std::move(policy)));
}

/// Vocabulary over record texts plus the default instructions and actions.
inline Vocab vocab_for(const std::vector<QueryRecord>& records) {
  std::vector<std::string> texts = {"YES NO Background: Question:", std::string(kDefaultGenInstruction),
                                    std::string(kDefaultRefineInstruction),
                                    std::string(kDefaultSummaryInstruction)};
  for (const auto& r : records) {
    texts.push_back(r.query);
    for (const auto& a : r.answers) texts.push_back(a);
    for (const auto& d : r.docs) texts.push_back(d.text);
  }
  return Vocab::build(texts);
}

}  // namespace ddr::testing
