#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ddr/eval.hpp"
#include "ddr/generator.hpp"
#include "ddr/pipeline.hpp"
#include "ddr/refiner.hpp"
#include "ddr/trainer.hpp"

namespace ddr {

/// Starting parameters for a toy module that has no checkpoint.
struct ToyInit {
  struct Bias {
    std::string prev;
    std::string next;
    double value = 0.0;
  };
  double w_copy = 0.0;
  int count_cap = 8;
  /// Added to W[v, </s>] for every v except <s>.
  double eos_bias = 0.0;
  std::vector<Bias> biases;
};

struct ModuleSpec {
  std::string kind = "toy";  // toy | external
  std::optional<std::filesystem::path> checkpoint;
  ToyInit init;
  std::vector<std::string> command;  // external only
  int timeout_ms = 30000;
  TrainConfig train;
};

enum class Schedule { GenFirst, KrFirst, Independent };

std::string_view to_string(Schedule schedule);
Schedule parse_schedule(std::string_view name);

/// Everything a run needs. Loaded from a JSON document; relative paths in the
/// file resolve against the file's directory.
struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path eval_dataset;  // empty: same as dataset
  std::string topology = "two-agent";  // two-agent | three-agent
  Schedule schedule = Schedule::GenFirst;
  int rounds = 1;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "ddr-run";
  std::size_t refine_budget = 5;
  std::size_t generator_docs = 5;
  std::size_t kr_mining_docs = 100;
  std::size_t doc_token_budget = 256;
  SamplingSchedule sampling;
  std::map<std::string, int> max_tokens;  // per task tag
  std::string gen_instruction{kDefaultGenInstruction};
  std::string refine_instruction{kDefaultRefineInstruction};
  std::string summary_instruction{kDefaultSummaryInstruction};
  std::map<std::string, ModuleSpec> modules;  // refiner, summarizer, generator

  void validate() const;
  std::string to_json() const;
  /// Parses without validating; call validate() after applying overrides.
  static RunConfig from_json(std::string_view text,
                             const std::filesystem::path& base_dir = std::filesystem::path{});
  static RunConfig load(const std::filesystem::path& path);
};

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "DDR_CONFIG";

struct GenMiningResult {
  std::vector<GenPreferencePair> pairs;
  /// Candidates per record, before deduplication.
  std::vector<std::pair<std::string, std::vector<Candidate>>> candidates;
};

struct KrMiningResult {
  std::vector<DocTriplet> triplets;
  std::size_t skipped = 0;  // records with tied rewards
};

struct StageRecord {
  int round = 0;
  std::string name;  // mine-gen | train-gen | mine-kr | train-kr
  std::vector<std::filesystem::path> artifacts;
};

struct RunSummary {
  std::vector<StageRecord> stages;
  EvalReport baseline;
  EvalReport final_report;
};

/// Owns the module state of a run and executes mining, training and the
/// round schedule.
class Orchestrator {
 public:
  explicit Orchestrator(RunConfig config);

  const RunConfig& config() const noexcept { return config_; }
  const std::vector<QueryRecord>& train_set() const noexcept { return train_; }
  const std::vector<QueryRecord>& eval_set() const noexcept { return eval_; }

  /// Pipeline over the current module state.
  Pipeline pipeline() const;
  /// Same topology with the generator alone on the query (no retrieval).
  Pipeline no_rag_pipeline() const;

  bool is_toy(const std::string& role) const;
  const ToyPolicy& toy(const std::string& role) const;
  void set_toy(const std::string& role, ToyPolicy policy);

  GenMiningResult mine_generation(const std::vector<QueryRecord>& records) const;
  KrMiningResult mine_refiner(const std::vector<QueryRecord>& records) const;

  /// DPO on the given pairs; updates the module and returns the trace.
  TrainResult train_module(const std::string& role, const std::vector<PreferencePair>& pairs);
  TrainResult train_module_sft(const std::string& role, const std::vector<LabeledExample>& examples);

  std::vector<PreferencePair> refiner_pairs(const std::vector<DocTriplet>& triplets) const;

  /// Runs the configured schedule for the configured rounds, writing
  /// {config.json, mined/, checkpoints/, reports/} under output_dir.
  RunSummary run();

  /// Stage names of one round, in execution order.
  static std::vector<std::string> round_stages(Schedule schedule);

 private:
  std::shared_ptr<Adapter> adapter(const std::string& role) const;

  RunConfig config_;
  std::vector<QueryRecord> train_;
  std::vector<QueryRecord> eval_;
  std::map<std::string, std::shared_ptr<const ToyPolicy>> toys_;
  std::map<std::string, std::shared_ptr<Adapter>> external_;
};

/// Vocabulary covering dataset texts, answers, instructions, template
/// literals and the YES/NO actions.
Vocab build_run_vocab(const RunConfig& config, const std::vector<QueryRecord>& train,
                      const std::vector<QueryRecord>& eval);

ToyPolicy make_toy_policy(const Vocab& vocab, const ToyInit& init);

}  // namespace ddr
