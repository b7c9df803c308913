#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ddr/adapter.hpp"
#include "ddr/dataset.hpp"
#include "ddr/metrics.hpp"

namespace ddr {

enum class AgentRole { Refine, Summarize, Generate };

std::string_view to_string(AgentRole role);

/// How a refine agent turns a judgment into an action.
enum class RefineDecision {
  GreedyText,  // first YES/NO in the greedy output, NO when neither appears
  Logprob,     // compare logprob("YES") and logprob("NO"), ties to YES
};

struct AgentNode {
  AgentRole role = AgentRole::Generate;
  std::shared_ptr<Adapter> adapter;
  PromptTemplate prompt;
  /// Overrides the task's decode budget when set.
  std::optional<int> max_tokens;
  /// Refine: number of leading documents judged. Summarize/Generate: number
  /// of leading documents (by rank) placed into the prompt.
  std::size_t doc_limit = 5;
  RefineDecision refine_decision = RefineDecision::GreedyText;

  int decode_budget(const TaskSpec& task) const;
};

/// Ordered agents V_1..V_T; the last and only the last one generates.
class Pipeline {
 public:
  explicit Pipeline(std::vector<AgentNode> nodes);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// 1-based access.
  const AgentNode& node(std::size_t t) const;
  AgentNode& node(std::size_t t);
  const std::vector<AgentNode>& nodes() const noexcept { return nodes_; }
  /// 1-based index of the first node with the role, 0 when absent.
  std::size_t find(AgentRole role) const;

  /// Task settings (metric, decode budget); defaults from TaskSpec::for_tag
  /// unless overridden.
  TaskSpec task_spec(const std::string& tag) const;
  void set_task_spec(TaskSpec spec);

 private:
  std::vector<AgentNode> nodes_;
  std::map<std::string, TaskSpec> task_overrides_;
};

/// Default refine-judge budget: the refiner only needs to emit one action.
inline constexpr int kJudgeMaxTokens = 4;

/// {q, D} -> V_KR -> V_Gen. The generator sees at most `generator_docs`
/// retained documents.
Pipeline compose_two_agent(std::shared_ptr<Adapter> refiner, std::shared_ptr<Adapter> generator,
                           std::size_t refine_budget = 5, std::size_t generator_docs = 5);
/// {q, D} -> V_KR -> V_Sum -> V_Gen; the summary is the generator's only
/// background document.
Pipeline compose_three_agent(std::shared_ptr<Adapter> refiner, std::shared_ptr<Adapter> summarizer,
                             std::shared_ptr<Adapter> generator, std::size_t refine_budget = 5,
                             std::size_t generator_docs = 5);

/// Output of one agent: a document subset (refine) or text (summarize/generate).
using AgentOutput = std::variant<std::vector<Document>, std::string>;

/// Documents the agent at position t receives when agent t-1 produced
/// `upstream`. For t == 1 the record's own documents are used.
std::vector<Document> downstream_docs(const AgentOutput& upstream);

/// Runs agent t (1-based) greedily on the given input documents.
AgentOutput run_agent(const Pipeline& pipeline, std::size_t t, const std::vector<Document>& input,
                      const QueryRecord& record);

/// The prompt agent t (summarize/generate) builds for its input documents.
std::string agent_prompt(const Pipeline& pipeline, std::size_t t, const std::vector<Document>& input,
                         const QueryRecord& record);

/// Outputs of every agent in order; last entry is y_T.
std::vector<AgentOutput> forward_trace(const Pipeline& pipeline, const QueryRecord& record);

/// Greedy propagation through the whole chain; returns y_T.
std::string forward(const Pipeline& pipeline, const QueryRecord& record);

/// Input documents agent t receives under greedy propagation of agents 1..t-1.
std::vector<Document> agent_input(const Pipeline& pipeline, std::size_t t, const QueryRecord& record);

struct RolloutResult {
  AgentOutput injected;
  std::string final_output;
  RewardScore reward;
};

/// Substitutes `injected` for agent t's output, runs V_{t+1..T} greedily
/// and scores y_T. At t == T the injected text is scored directly.
RolloutResult rollout_reward(const Pipeline& pipeline, std::size_t t, const AgentOutput& injected,
                             const QueryRecord& record);

}  // namespace ddr
