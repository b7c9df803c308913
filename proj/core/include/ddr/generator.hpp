#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ddr/pipeline.hpp"
#include "ddr/trainer.hpp"

namespace ddr {

enum class CandidateSource { WithDocs, QueryOnly };

std::string_view to_string(CandidateSource source);

struct Candidate {
  std::string text;
  CandidateSource source = CandidateSource::WithDocs;
  double temperature = 0.0;
  int round = 0;
  RewardScore reward;
};

struct SamplingSchedule {
  std::vector<double> temperatures{0.5, 0.6, 0.7, 0.8, 0.9};
  int rounds = 5;

  std::size_t candidates_per_record() const { return temperatures.size() * rounds * 2; }
};

/// Seed for one sample, derived from every coordinate of the schedule.
std::uint64_t candidate_seed(std::uint64_t seed, std::string_view query_id, double temperature,
                             int round, CandidateSource source);

/// Samples each (temperature, round) once with the documents and once from
/// the query alone at the generate agent `t`, and scores every sample.
/// Output is in schedule order: temperature, then round, then source.
std::vector<Candidate> sample_candidates(const Pipeline& pipeline, std::size_t t,
                                         const QueryRecord& record,
                                         const std::vector<Document>& refined,
                                         const SamplingSchedule& schedule, std::uint64_t seed);

struct GenPreferencePair {
  std::string query_id;
  std::string context;
  Candidate positive;
  Candidate negative;
};

/// Drops empty and duplicate texts (first occurrence wins), then takes the
/// first maximum and first minimum in schedule order. No pair when fewer
/// than two distinct texts remain or every reward is equal.
std::optional<GenPreferencePair> mine_generation_pair(const std::vector<Candidate>& candidates,
                                                      std::string_view query_id,
                                                      std::string_view context);

PreferencePair to_preference_pair(const GenPreferencePair& pair);

/// {query_id, context_hash, pos_text, neg_text, pos_reward, neg_reward, context}
std::string serialize_gen_pair(const GenPreferencePair& pair);
PreferencePair parse_gen_pair(std::string_view line);

/// {query_id, source, temperature, round, text, reward}
std::string serialize_candidate(std::string_view query_id, const Candidate& candidate);

}  // namespace ddr
