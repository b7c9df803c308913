#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ddr/dataset.hpp"

namespace ddr {

/// A reward in [0, 1] together with the metric that produced it.
struct RewardScore {
  double value = 0.0;
  MetricKind metric = MetricKind::Accuracy;
};

/// Lowercase, delete ASCII punctuation, drop the articles a/an/the, split on
/// whitespace.
std::vector<std::string> normalize_text(std::string_view text);

/// Length of the longest common subsequence of two token lists.
std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

RewardScore rouge_l(std::string_view prediction, std::string_view reference);
RewardScore token_f1(std::string_view prediction, std::string_view reference);
/// 1 when any normalized answer occurs as a contiguous token run inside the
/// normalized prediction.
RewardScore span_accuracy(std::string_view prediction, const std::vector<std::string>& answers);

/// True if the normalized needle occurs contiguously inside the normalized
/// haystack. Empty needles never match.
bool contains_span(std::string_view haystack, std::string_view needle);

/// Dispatches on the task metric; rouge-l and f1 take the max over answers.
RewardScore score(const TaskSpec& task, std::string_view prediction,
                  const std::vector<std::string>& answers);

}  // namespace ddr
