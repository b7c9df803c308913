#include "ddr/pipeline.hpp"

#include <algorithm>
#include <stdexcept>

#include "ddr/errors.hpp"
#include "ddr/refiner.hpp"

namespace ddr {

std::string_view to_string(AgentRole role) {
  switch (role) {
    case AgentRole::Refine: return "refine";
    case AgentRole::Summarize: return "summarize";
    case AgentRole::Generate: return "generate";
  }
  return "generate";
}

int AgentNode::decode_budget(const TaskSpec& task) const {
  return max_tokens.value_or(task.max_generation_tokens);
}

Pipeline::Pipeline(std::vector<AgentNode> nodes) : nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw ConfigError("pipeline needs at least one agent");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (!n.adapter) throw ConfigError("agent " + std::to_string(i + 1) + " has no adapter");
    const bool last = i + 1 == nodes_.size();
    if ((n.role == AgentRole::Generate) != last)
      throw ConfigError("exactly one generate agent is allowed and it must be last");
    n.prompt.validate();
    const bool judge = n.prompt.mode == PromptMode::RefineJudge;
    if ((n.role == AgentRole::Refine) != judge)
      throw ConfigError("agent " + std::to_string(i + 1) + " (" + std::string(to_string(n.role)) +
                        ") cannot use a " + std::string(to_string(n.prompt.mode)) + " prompt");
  }
}

const AgentNode& Pipeline::node(std::size_t t) const {
  if (t < 1 || t > nodes_.size()) throw std::out_of_range("agent index out of range");
  return nodes_[t - 1];
}

AgentNode& Pipeline::node(std::size_t t) {
  if (t < 1 || t > nodes_.size()) throw std::out_of_range("agent index out of range");
  return nodes_[t - 1];
}

std::size_t Pipeline::find(AgentRole role) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].role == role) return i + 1;
  return 0;
}

TaskSpec Pipeline::task_spec(const std::string& tag) const {
  if (auto it = task_overrides_.find(tag); it != task_overrides_.end()) return it->second;
  return TaskSpec::for_tag(tag);
}

void Pipeline::set_task_spec(TaskSpec spec) {
  if (spec.max_generation_tokens < 1) throw ConfigError("max_generation_tokens must be >= 1");
  task_overrides_[spec.tag] = std::move(spec);
}

namespace {
AgentNode make_node(AgentRole role, std::shared_ptr<Adapter> adapter, PromptTemplate prompt,
                    std::size_t doc_limit) {
  AgentNode n;
  n.role = role;
  n.adapter = std::move(adapter);
  n.prompt = std::move(prompt);
  n.doc_limit = doc_limit;
  if (role == AgentRole::Refine) n.max_tokens = kJudgeMaxTokens;
  return n;
}
}  // namespace

Pipeline compose_two_agent(std::shared_ptr<Adapter> refiner, std::shared_ptr<Adapter> generator,
                           std::size_t refine_budget, std::size_t generator_docs) {
  std::vector<AgentNode> nodes;
  nodes.push_back(make_node(AgentRole::Refine, std::move(refiner),
                            PromptTemplate::refine_judge(std::string(kDefaultRefineInstruction)),
                            refine_budget));
  nodes.push_back(make_node(AgentRole::Generate, std::move(generator),
                            PromptTemplate::with_docs(std::string(kDefaultGenInstruction)),
                            generator_docs));
  return Pipeline(std::move(nodes));
}

Pipeline compose_three_agent(std::shared_ptr<Adapter> refiner, std::shared_ptr<Adapter> summarizer,
                             std::shared_ptr<Adapter> generator, std::size_t refine_budget,
                             std::size_t generator_docs) {
  std::vector<AgentNode> nodes;
  nodes.push_back(make_node(AgentRole::Refine, std::move(refiner),
                            PromptTemplate::refine_judge(std::string(kDefaultRefineInstruction)),
                            refine_budget));
  nodes.push_back(make_node(AgentRole::Summarize, std::move(summarizer),
                            PromptTemplate::with_docs(std::string(kDefaultSummaryInstruction)),
                            generator_docs));
  nodes.push_back(make_node(AgentRole::Generate, std::move(generator),
                            PromptTemplate::with_docs(std::string(kDefaultGenInstruction)),
                            generator_docs));
  return Pipeline(std::move(nodes));
}

std::vector<Document> downstream_docs(const AgentOutput& upstream) {
  if (const auto* docs = std::get_if<std::vector<Document>>(&upstream)) return *docs;
  const auto& text = std::get<std::string>(upstream);
  if (text.find_first_not_of(" \t\r\n\f\v") == std::string::npos) return {};
  return {Document{"summary", text, 1, std::nullopt}};
}

namespace {

std::vector<Document> leading_docs(std::vector<Document> docs, std::size_t limit) {
  std::stable_sort(docs.begin(), docs.end(),
                   [](const Document& a, const Document& b) { return a.rank < b.rank; });
  if (docs.size() > limit) docs.resize(limit);
  return docs;
}

[[noreturn]] void rethrow_with_agent(std::size_t t, const AgentNode& node) {
  try {
    throw;
  } catch (const TransportError& e) {
    throw TransportError("agent " + std::to_string(t) + " (" + std::string(to_string(node.role)) +
                             "): " + e.what(),
                         e.payload());
  }
}

}  // namespace

std::string agent_prompt(const Pipeline& pipeline, std::size_t t, const std::vector<Document>& input,
                         const QueryRecord& record) {
  const auto& node = pipeline.node(t);
  if (node.role == AgentRole::Refine)
    throw std::invalid_argument("refine agents build one prompt per document");
  return build_prompt(node.prompt, leading_docs(input, node.doc_limit), record.query);
}

AgentOutput run_agent(const Pipeline& pipeline, std::size_t t, const std::vector<Document>& input,
                      const QueryRecord& record) {
  const auto& node = pipeline.node(t);
  try {
    if (node.role == AgentRole::Refine) return refine(node, record, input).retained;
    GenerateRequest req;
    req.prompt = agent_prompt(pipeline, t, input, record);
    req.temperature = 0.0;
    req.max_tokens = node.decode_budget(pipeline.task_spec(record.task));
    return node.adapter->generate(req);
  } catch (const TransportError&) {
    rethrow_with_agent(t, node);
  }
}

std::vector<AgentOutput> forward_trace(const Pipeline& pipeline, const QueryRecord& record) {
  std::vector<AgentOutput> outputs;
  std::vector<Document> input = record.docs;
  for (std::size_t t = 1; t <= pipeline.size(); ++t) {
    outputs.push_back(run_agent(pipeline, t, input, record));
    input = downstream_docs(outputs.back());
  }
  return outputs;
}

std::string forward(const Pipeline& pipeline, const QueryRecord& record) {
  return std::get<std::string>(forward_trace(pipeline, record).back());
}

std::vector<Document> agent_input(const Pipeline& pipeline, std::size_t t, const QueryRecord& record) {
  if (t < 1 || t > pipeline.size()) throw std::out_of_range("agent index out of range");
  std::vector<Document> input = record.docs;
  for (std::size_t k = 1; k < t; ++k) input = downstream_docs(run_agent(pipeline, k, input, record));
  return input;
}

RolloutResult rollout_reward(const Pipeline& pipeline, std::size_t t, const AgentOutput& injected,
                             const QueryRecord& record) {
  const auto& node = pipeline.node(t);
  const bool is_docs = std::holds_alternative<std::vector<Document>>(injected);
  if ((node.role == AgentRole::Refine) != is_docs)
    throw std::invalid_argument("injection type does not match the output of a " +
                                std::string(to_string(node.role)) + " agent");

  AgentOutput current = injected;
  for (std::size_t k = t + 1; k <= pipeline.size(); ++k)
    current = run_agent(pipeline, k, downstream_docs(current), record);

  RolloutResult out;
  out.injected = injected;
  out.final_output = std::get<std::string>(current);
  out.reward = score(pipeline.task_spec(record.task), out.final_output, record.answers);
  return out;
}

}  // namespace ddr
