#include "ddr/eval.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "ddr/errors.hpp"
#include "ddr/refiner.hpp"
#include "ddr/util.hpp"
#include "json.hpp"

namespace ddr {

double EvalReport::overall() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& o : outcomes) {
    if (o.error) continue;
    sum += o.score;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json obj;
  obj["overall"] = overall();
  obj["mean_score"] = mean_score;
  obj["mean_length"] = mean_length;
  obj["count"] = count;
  obj["failures"] = failures;
  obj["records"] = nlohmann::ordered_json::array();
  for (const auto& o : outcomes) {
    nlohmann::ordered_json r;
    r["id"] = o.id;
    r["task"] = o.task;
    r["output"] = o.output;
    r["score"] = o.score;
    r["length"] = o.length;
    if (o.error) r["error"] = *o.error;
    obj["records"].push_back(std::move(r));
  }
  return obj.dump(2);
}

std::map<std::string, double> length_stats(const std::vector<RecordOutcome>& outcomes) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> acc;  // total tokens, records
  for (const auto& o : outcomes) {
    if (o.error) continue;
    auto& a = acc[o.task];
    a.first += split_whitespace(o.output).size();
    ++a.second;
  }
  std::map<std::string, double> out;
  for (const auto& [task, a] : acc)
    out[task] = static_cast<double>(a.first) / static_cast<double>(a.second);
  return out;
}

EvalReport evaluate(const Pipeline& pipeline, const std::vector<QueryRecord>& dataset) {
  if (dataset.empty()) throw std::invalid_argument("evaluation dataset is empty");
  EvalReport report;
  std::map<std::string, double> sums;
  for (const auto& record : dataset) {
    RecordOutcome o;
    o.id = record.id;
    o.task = record.task;
    try {
      o.output = forward(pipeline, record);
      o.score = score(pipeline.task_spec(record.task), o.output, record.answers).value;
      o.length = split_whitespace(o.output).size();
      sums[o.task] += o.score;
      ++report.count[o.task];
    } catch (const TransportError& e) {
      o.error = e.what();
      ++report.failures;
    } catch (const CapabilityError& e) {
      o.error = e.what();
      ++report.failures;
    }
    report.outcomes.push_back(std::move(o));
  }
  for (const auto& [task, sum] : sums)
    report.mean_score[task] = sum / static_cast<double>(report.count[task]);
  report.mean_length = length_stats(report.outcomes);
  return report;
}

bool has_answer(const QueryRecord& record, std::size_t top_k) {
  const std::size_t k = std::min(top_k, record.docs.size());
  for (std::size_t i = 0; i < k; ++i)
    for (const auto& a : record.answers)
      if (contains_span(record.docs[i].text, a)) return true;
  return false;
}

ScenarioPartition partition_scenarios(const std::vector<QueryRecord>& dataset,
                                      const std::vector<RecordOutcome>& no_rag,
                                      const std::vector<RecordOutcome>& rag) {
  if (no_rag.size() != dataset.size() || rag.size() != dataset.size())
    throw std::invalid_argument("outcome lists must align with the dataset");
  ScenarioPartition out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& r = dataset[i];
    if (TaskSpec::for_tag(r.task).metric != MetricKind::Accuracy)
      throw ConfigError("scenario partition needs accuracy-scored tasks; '" + r.id + "' is " + r.task);
    if (no_rag[i].id != r.id || rag[i].id != r.id)
      throw std::invalid_argument("outcome lists are not aligned at record '" + r.id + "'");
    (has_answer(r) ? out.has_answer : out.miss_answer).push_back(r.id);
    if (!no_rag[i].error && no_rag[i].score == 1.0) out.internal_knowledge.push_back(r.id);
  }
  return out;
}

std::optional<double> subset_mean(const std::vector<RecordOutcome>& outcomes,
                                  const std::vector<std::string>& ids) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& o : outcomes) {
    if (o.error || !wanted.count(o.id)) continue;
    sum += o.score;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

NoiseInjection inject_noise(const QueryRecord& record, int n, std::uint64_t seed) {
  constexpr std::size_t kTop = 5;
  constexpr std::size_t kPool = 100;
  if (n < 0 || n > 4) throw std::invalid_argument("noise count must be in 0..4");
  if (record.docs.size() < kPool)
    throw DatasetError("record '" + record.id + "' has fewer than 100 documents");

  std::vector<std::size_t> bearing;
  for (std::size_t i = 0; i < kTop; ++i)
    for (const auto& a : record.answers)
      if (contains_span(record.docs[i].text, a)) {
        bearing.push_back(i);
        break;
      }
  if (bearing.empty())
    throw DatasetError("record '" + record.id + "' has no answer-bearing top-5 document");

  Rng rng(derive_seed(seed, {fnv1a64(record.id), static_cast<std::uint64_t>(n)}));
  const std::size_t keep = bearing[rng.below(bearing.size())];
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < kTop; ++i)
    if (i != keep) slots.push_back(i);
  // seeded partial Fisher-Yates picks which slots get replaced
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i)
    std::swap(slots[i], slots[i + rng.below(slots.size() - i)]);
  slots.resize(static_cast<std::size_t>(n));
  std::sort(slots.begin(), slots.end());

  NoiseInjection out;
  out.protected_doc_id = record.docs[keep].doc_id;
  out.replaced_slots = slots;
  out.docs.assign(record.docs.begin(), record.docs.begin() + kTop);
  // slot j (ascending) receives the j-th of the last n documents of the top-100
  for (std::size_t j = 0; j < slots.size(); ++j)
    out.docs[slots[j]] = record.docs[kPool - static_cast<std::size_t>(n) + j];
  for (std::size_t i = 0; i < kTop; ++i) out.docs[i].rank = static_cast<int>(i + 1);
  return out;
}

std::vector<NoiseSweepPoint> noise_sweep(const Pipeline& pipeline,
                                         const std::vector<QueryRecord>& dataset,
                                         const std::vector<int>& ns, std::uint64_t seed) {
  std::vector<NoiseSweepPoint> out;
  for (int n : ns) {
    NoiseSweepPoint point;
    point.n = n;
    std::vector<QueryRecord> noisy;
    for (const auto& r : dataset) {
      try {
        QueryRecord copy = r;
        copy.docs = inject_noise(r, n, seed).docs;
        noisy.push_back(std::move(copy));
      } catch (const DatasetError&) {
        point.skipped.push_back(r.id);
      }
    }
    if (!noisy.empty()) point.report = evaluate(pipeline, noisy);
    out.push_back(std::move(point));
  }
  return out;
}

std::string noise_table(const std::vector<NoiseSweepPoint>& points) {
  std::ostringstream out;
  out << "n\tscore\tevaluated\tskipped\n";
  for (const auto& p : points) {
    out << p.n << '\t' << p.report.overall() << '\t' << p.report.outcomes.size() << '\t'
        << p.skipped.size() << '\n';
  }
  return out.str();
}

double refiner_retention_accuracy(const AgentNode& refiner, const std::vector<QueryRecord>& dataset) {
  if (dataset.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& record : dataset) {
    if (TaskSpec::for_tag(record.task).metric != MetricKind::Accuracy)
      throw ConfigError("retention accuracy needs accuracy-scored tasks");
    auto retained = refine(refiner, record, record.docs).retained;
    if (retained.size() > 5) retained.resize(5);
    QueryRecord view = record;
    view.docs = retained;
    if (has_answer(view)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

}  // namespace ddr
