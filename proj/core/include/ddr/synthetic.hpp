#pragma once

#include <cstdint>
#include <vector>

#include "ddr/dataset.hpp"

namespace ddr {

/// Generated QA corpus: each query asks which entity a topic is linked to.
/// Exactly one document names the answer entity; every other
/// document links some topic to a different entity using the same phrasing.
struct SyntheticOptions {
  std::size_t records = 200;
  std::size_t docs_per_record = 100;
  std::size_t entities = 10;
  /// Fraction of records whose answer document sits below the top 5.
  double miss_fraction = 0.0;
  /// Times the answer document names the answer entity.
  std::size_t answer_mentions = 3;
  /// Chance that a distractor talks about the query's own topic.
  double same_topic_fraction = 0.25;
  std::uint64_t seed = 1;
};

std::vector<QueryRecord> generate_synthetic(const SyntheticOptions& options);

}  // namespace ddr
