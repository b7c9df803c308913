#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ddr/pipeline.hpp"

namespace ddr {

struct RecordOutcome {
  std::string id;
  std::string task;
  std::string output;
  double score = 0.0;
  std::size_t length = 0;  // whitespace tokens
  /// Set when an adapter failed; such records are excluded from the means.
  std::optional<std::string> error;
};

struct EvalReport {
  std::vector<RecordOutcome> outcomes;  // dataset order
  std::map<std::string, double> mean_score;   // per task
  std::map<std::string, double> mean_length;  // per task
  std::map<std::string, std::size_t> count;   // scored records per task
  std::size_t failures = 0;

  /// Mean score over every scored record.
  double overall() const;
  std::string to_json() const;
};

/// Greedy forward pass of every record.
EvalReport evaluate(const Pipeline& pipeline, const std::vector<QueryRecord>& dataset);

/// Whitespace-token length of each output, averaged per task.
std::map<std::string, double> length_stats(const std::vector<RecordOutcome>& outcomes);

/// True when one of the first `top_k` documents contains a gold answer span.
bool has_answer(const QueryRecord& record, std::size_t top_k = 5);

struct ScenarioPartition {
  std::vector<std::string> has_answer;
  std::vector<std::string> miss_answer;
  std::vector<std::string> internal_knowledge;
};

/// Splits accuracy-scored records into Has-Answer / Miss-Answer by the top-5
/// documents and Internal-Knowledge by the no-retrieval run. Outcome lists
/// must align with the dataset.
ScenarioPartition partition_scenarios(const std::vector<QueryRecord>& dataset,
                                      const std::vector<RecordOutcome>& no_rag,
                                      const std::vector<RecordOutcome>& rag);

/// Mean score over the named subset; nullopt for an empty subset.
std::optional<double> subset_mean(const std::vector<RecordOutcome>& outcomes,
                                  const std::vector<std::string>& ids);

struct NoiseInjection {
  std::vector<Document> docs;  // exactly 5, ranks 1..5 by slot
  std::string protected_doc_id;
  std::vector<std::size_t> replaced_slots;  // 0-based slots of the top-5
};

/// Replaces `n` (0..4) of the top-5 slots with the last `n` of the top-100
/// documents, keeping one seeded-chosen answer-bearing document. Throws
/// DatasetError when the record has fewer than 100 documents or no
/// answer-bearing top-5 document.
NoiseInjection inject_noise(const QueryRecord& record, int n, std::uint64_t seed);

struct NoiseSweepPoint {
  int n = 0;
  EvalReport report;
  std::vector<std::string> skipped;  // records failing the preconditions
};

std::vector<NoiseSweepPoint> noise_sweep(const Pipeline& pipeline,
                                         const std::vector<QueryRecord>& dataset,
                                         const std::vector<int>& ns, std::uint64_t seed);

/// Tab-separated "n\tscore\tevaluated\tskipped" rows.
std::string noise_table(const std::vector<NoiseSweepPoint>& points);

/// Fraction of records whose retained top-5 documents contain a gold answer
/// span. Discarding everything counts as 0.
double refiner_retention_accuracy(const AgentNode& refiner, const std::vector<QueryRecord>& dataset);

}  // namespace ddr
