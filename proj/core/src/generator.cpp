#include "ddr/generator.hpp"

#include <set>

#include "ddr/errors.hpp"
#include "ddr/util.hpp"
#include "json.hpp"

namespace ddr {

std::string_view to_string(CandidateSource source) {
  return source == CandidateSource::WithDocs ? "with-docs" : "query-only";
}

std::uint64_t candidate_seed(std::uint64_t seed, std::string_view query_id, double temperature,
                             int round, CandidateSource source) {
  return derive_seed(seed, {fnv1a64(query_id), temperature_key(temperature),
                            static_cast<std::uint64_t>(round),
                            source == CandidateSource::WithDocs ? 0u : 1u});
}

std::vector<Candidate> sample_candidates(const Pipeline& pipeline, std::size_t t,
                                         const QueryRecord& record,
                                         const std::vector<Document>& refined,
                                         const SamplingSchedule& schedule, std::uint64_t seed) {
  const auto& node = pipeline.node(t);
  if (node.role == AgentRole::Refine) throw ConfigError("cannot sample text from a refine agent");
  const TaskSpec task = pipeline.task_spec(record.task);
  const std::string with_docs = agent_prompt(pipeline, t, refined, record);
  const std::string query_only = agent_prompt(pipeline, t, {}, record);

  std::vector<Candidate> out;
  out.reserve(schedule.candidates_per_record());
  for (double temp : schedule.temperatures) {
    for (int round = 0; round < schedule.rounds; ++round) {
      for (auto source : {CandidateSource::WithDocs, CandidateSource::QueryOnly}) {
        GenerateRequest req;
        req.prompt = source == CandidateSource::WithDocs ? with_docs : query_only;
        req.temperature = temp;
        req.max_tokens = node.decode_budget(task);
        req.seed = candidate_seed(seed, record.id, temp, round, source);
        Candidate c;
        c.text = node.adapter->generate(req);
        c.source = source;
        c.temperature = temp;
        c.round = round;
        // score through the rest of the chain; at the last agent this is S(text)
        c.reward = rollout_reward(pipeline, t, c.text, record).reward;
        out.push_back(std::move(c));
      }
    }
  }
  return out;
}

std::optional<GenPreferencePair> mine_generation_pair(const std::vector<Candidate>& candidates,
                                                      std::string_view query_id,
                                                      std::string_view context) {
  std::vector<const Candidate*> unique;
  std::set<std::string> seen;
  for (const auto& c : candidates) {
    if (split_whitespace(c.text).empty()) continue;
    if (seen.insert(c.text).second) unique.push_back(&c);
  }
  if (unique.size() < 2) return std::nullopt;
  const Candidate* best = unique.front();
  const Candidate* worst = unique.front();
  for (const auto* c : unique) {
    if (c->reward.value > best->reward.value) best = c;
    if (c->reward.value < worst->reward.value) worst = c;
  }
  if (best->reward.value == worst->reward.value) return std::nullopt;
  return GenPreferencePair{std::string(query_id), std::string(context), *best, *worst};
}

PreferencePair to_preference_pair(const GenPreferencePair& pair) {
  return {pair.query_id, pair.context, pair.positive.text, pair.negative.text};
}

std::string serialize_gen_pair(const GenPreferencePair& pair) {
  nlohmann::ordered_json obj;
  obj["query_id"] = pair.query_id;
  obj["context_hash"] = hex64(fnv1a64(pair.context));
  obj["pos_text"] = pair.positive.text;
  obj["neg_text"] = pair.negative.text;
  obj["pos_reward"] = pair.positive.reward.value;
  obj["neg_reward"] = pair.negative.reward.value;
  obj["context"] = pair.context;
  return obj.dump();
}

PreferencePair parse_gen_pair(std::string_view line) {
  try {
    const auto obj = nlohmann::json::parse(line);
    PreferencePair p;
    p.query_id = obj.at("query_id").get<std::string>();
    p.context = obj.at("context").get<std::string>();
    p.chosen = obj.at("pos_text").get<std::string>();
    p.rejected = obj.at("neg_text").get<std::string>();
    if (obj.at("context_hash").get<std::string>() != hex64(fnv1a64(p.context)))
      throw DatasetError("context_hash does not match context for query '" + p.query_id + "'");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed generation pair: ") + e.what());
  }
}

std::string serialize_candidate(std::string_view query_id, const Candidate& candidate) {
  nlohmann::ordered_json obj;
  obj["query_id"] = query_id;
  obj["source"] = to_string(candidate.source);
  obj["temperature"] = candidate.temperature;
  obj["round"] = candidate.round;
  obj["text"] = candidate.text;
  obj["reward"] = candidate.reward.value;
  return obj.dump();
}

}  // namespace ddr
