#include "ddr/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "ddr/errors.hpp"
#include "ddr/util.hpp"

namespace ddr {

std::vector<std::string> normalize_text(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(c)));
  }
  std::vector<std::string> out;
  for (auto& tok : split_whitespace(cleaned)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    out.push_back(std::move(tok));
  }
  return out;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {
double f_measure(double overlap, std::size_t pred_len, std::size_t ref_len) {
  if (overlap <= 0.0 || pred_len == 0 || ref_len == 0) return 0.0;
  const double p = overlap / static_cast<double>(pred_len);
  const double r = overlap / static_cast<double>(ref_len);
  return 2.0 * p * r / (p + r);
}
}  // namespace

RewardScore rouge_l(std::string_view prediction, std::string_view reference) {
  const auto pred = normalize_text(prediction);
  const auto ref = normalize_text(reference);
  const auto lcs = lcs_length(pred, ref);
  return {f_measure(static_cast<double>(lcs), pred.size(), ref.size()), MetricKind::RougeL};
}

RewardScore token_f1(std::string_view prediction, std::string_view reference) {
  const auto pred = normalize_text(prediction);
  const auto ref = normalize_text(reference);
  std::map<std::string, int> counts;
  for (const auto& t : ref) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return {f_measure(static_cast<double>(overlap), pred.size(), ref.size()), MetricKind::F1};
}

namespace {
bool contains_run(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}
}  // namespace

bool contains_span(std::string_view haystack, std::string_view needle) {
  return contains_run(normalize_text(haystack), normalize_text(needle));
}

RewardScore span_accuracy(std::string_view prediction, const std::vector<std::string>& answers) {
  const auto pred = normalize_text(prediction);
  for (const auto& a : answers) {
    if (contains_run(pred, normalize_text(a))) return {1.0, MetricKind::Accuracy};
  }
  return {0.0, MetricKind::Accuracy};
}

RewardScore score(const TaskSpec& task, std::string_view prediction,
                  const std::vector<std::string>& answers) {
  switch (task.metric) {
    case MetricKind::Accuracy:
      return span_accuracy(prediction, answers);
    case MetricKind::RougeL: {
      RewardScore best{0.0, MetricKind::RougeL};
      for (const auto& a : answers) best.value = std::max(best.value, rouge_l(prediction, a).value);
      return best;
    }
    case MetricKind::F1: {
      RewardScore best{0.0, MetricKind::F1};
      for (const auto& a : answers) best.value = std::max(best.value, token_f1(prediction, a).value);
      return best;
    }
  }
  throw ConfigError("unknown metric kind");
}

}  // namespace ddr
