#include "ddr/refiner.hpp"

#include <algorithm>
#include <cctype>

#include "ddr/errors.hpp"
#include "json.hpp"

namespace ddr {

std::string_view to_string(Action action) { return action == Action::Yes ? "YES" : "NO"; }

Action parse_refine_action(std::string_view output) {
  std::string upper(output);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  const auto yes = upper.find("YES");
  const auto no = upper.find("NO");
  if (yes == std::string::npos && no == std::string::npos) return Action::No;
  return yes < no ? Action::Yes : Action::No;
}

RefineResult refine(const AgentNode& node, const QueryRecord& record,
                    const std::vector<Document>& docs) {
  std::vector<Document> ordered = docs;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Document& a, const Document& b) { return a.rank < b.rank; });
  if (ordered.size() > node.doc_limit) ordered.resize(node.doc_limit);

  RefineResult out;
  for (const auto& doc : ordered) {
    RefineAction act;
    act.doc_id = doc.doc_id;
    const std::string prompt = build_prompt(node.prompt, {doc}, record.query);
    if (node.refine_decision == RefineDecision::Logprob) {
      act.logprob_yes = node.adapter->logprob({prompt, "YES"}).logprob;
      act.logprob_no = node.adapter->logprob({prompt, "NO"}).logprob;
      act.action = *act.logprob_yes >= *act.logprob_no ? Action::Yes : Action::No;
      act.raw_output = std::string(to_string(act.action));
    } else {
      GenerateRequest req;
      req.prompt = prompt;
      req.temperature = 0.0;
      req.max_tokens = node.max_tokens.value_or(kJudgeMaxTokens);
      act.raw_output = node.adapter->generate(req);
      act.action = parse_refine_action(act.raw_output);
    }
    if (act.action == Action::Yes) out.retained.push_back(doc);
    out.actions.push_back(std::move(act));
  }
  return out;
}

RefinerMining mine_refiner_preferences(const Pipeline& pipeline, const QueryRecord& record,
                                       std::size_t max_docs) {
  const std::size_t t = pipeline.find(AgentRole::Refine);
  if (t == 0) throw ConfigError("pipeline has no refine agent");
  if (record.docs.size() < 2)
    throw std::invalid_argument("refiner mining needs at least two documents");

  RefinerMining out;
  // Inputs of the refine agent under greedy propagation (the record's own
  // docs when the refiner is first).
  std::vector<Document> docs = agent_input(pipeline, t, record);
  std::stable_sort(docs.begin(), docs.end(),
                   [](const Document& a, const Document& b) { return a.rank < b.rank; });
  if (docs.size() > max_docs) docs.resize(max_docs);

  std::size_t best = 0, worst = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto result = rollout_reward(pipeline, t, std::vector<Document>{docs[i]}, record);
    out.rewards.emplace_back(docs[i].doc_id, result.reward.value);
    if (result.reward.value > out.rewards[best].second) best = i;
    if (result.reward.value <= out.rewards[worst].second) worst = i;
  }
  if (out.rewards.size() < 2 || out.rewards[best].second == out.rewards[worst].second) return out;
  out.triplet = DocTriplet{record.id, docs[best], docs[worst], out.rewards[best].second,
                           out.rewards[worst].second};
  return out;
}

std::vector<PreferencePair> triplet_to_dpo_pairs(const DocTriplet& triplet, const QueryRecord& record,
                                                 const PromptTemplate& judge_template) {
  std::vector<PreferencePair> pairs;
  pairs.push_back({triplet.query_id, build_prompt(judge_template, {triplet.positive}, record.query),
                   "YES", "NO"});
  pairs.push_back({triplet.query_id, build_prompt(judge_template, {triplet.negative}, record.query),
                   "NO", "YES"});
  return pairs;
}

std::string serialize_triplet(const DocTriplet& triplet) {
  nlohmann::ordered_json obj;
  obj["query_id"] = triplet.query_id;
  obj["pos_doc_id"] = triplet.positive.doc_id;
  obj["neg_doc_id"] = triplet.negative.doc_id;
  obj["pos_reward"] = triplet.pos_reward;
  obj["neg_reward"] = triplet.neg_reward;
  return obj.dump();
}

DocTriplet parse_triplet(std::string_view line, const std::vector<QueryRecord>& dataset) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(line);
    DocTriplet t;
    t.query_id = obj.at("query_id").get<std::string>();
    const auto pos_id = obj.at("pos_doc_id").get<std::string>();
    const auto neg_id = obj.at("neg_doc_id").get<std::string>();
    t.pos_reward = obj.at("pos_reward").get<double>();
    t.neg_reward = obj.at("neg_reward").get<double>();
    auto rec = std::find_if(dataset.begin(), dataset.end(),
                            [&](const QueryRecord& r) { return r.id == t.query_id; });
    if (rec == dataset.end()) throw DatasetError("triplet references unknown query '" + t.query_id + "'");
    auto find_doc = [&](const std::string& id) {
      auto it = std::find_if(rec->docs.begin(), rec->docs.end(),
                             [&](const Document& d) { return d.doc_id == id; });
      if (it == rec->docs.end()) throw DatasetError("triplet references unknown doc '" + id + "'");
      return *it;
    };
    t.positive = find_doc(pos_id);
    t.negative = find_doc(neg_id);
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed triplet: ") + e.what());
  }
}

}  // namespace ddr
