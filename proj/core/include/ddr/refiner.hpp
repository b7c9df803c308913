#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ddr/pipeline.hpp"
#include "ddr/trainer.hpp"

namespace ddr {

enum class Action { Yes, No };

std::string_view to_string(Action action);

/// First case-insensitive occurrence of YES or NO decides; anything else is NO.
Action parse_refine_action(std::string_view output);

struct RefineAction {
  std::string doc_id;
  Action action = Action::No;
  std::string raw_output;
  /// Filled when the adapter can score text.
  std::optional<double> logprob_yes;
  std::optional<double> logprob_no;
};

struct RefineResult {
  std::vector<RefineAction> actions;
  std::vector<Document> retained;  // rank order
};

/// Judges each of the first `node.doc_limit` documents on its own with the
/// refine-judge prompt. Retained documents keep their rank order.
RefineResult refine(const AgentNode& node, const QueryRecord& record,
                    const std::vector<Document>& docs);

struct DocTriplet {
  std::string query_id;
  Document positive;
  Document negative;
  double pos_reward = 0.0;
  double neg_reward = 0.0;
};

struct RefinerMining {
  std::optional<DocTriplet> triplet;
  /// Reward of each judged document, in rank order.
  std::vector<std::pair<std::string, double>> rewards;
};

/// Injects each of the first `max_docs` documents alone at the refine
/// position and scores the downstream rollout. Positive = highest reward
/// (ties to the better rank), negative = lowest (ties to the worse rank);
/// no triplet when every reward is equal.
RefinerMining mine_refiner_preferences(const Pipeline& pipeline, const QueryRecord& record,
                                       std::size_t max_docs = 100);

/// Pair A prefers YES on the positive document, pair B prefers NO on the
/// negative one. Contexts are refine-judge prompts.
std::vector<PreferencePair> triplet_to_dpo_pairs(const DocTriplet& triplet, const QueryRecord& record,
                                                 const PromptTemplate& judge_template);

/// Line record {query_id, pos_doc_id, neg_doc_id, pos_reward, neg_reward}.
std::string serialize_triplet(const DocTriplet& triplet);
/// Resolves the doc ids against the dataset record.
DocTriplet parse_triplet(std::string_view line, const std::vector<QueryRecord>& dataset);

}  // namespace ddr
