#include "ddr/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ddr/errors.hpp"
#include "ddr/metrics.hpp"
#include "ddr/util.hpp"
#include "json.hpp"

namespace ddr {

using ojson = nlohmann::ordered_json;

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::Accuracy: return "accuracy";
    case MetricKind::RougeL: return "rouge-l";
    case MetricKind::F1: return "f1";
  }
  return "accuracy";
}

MetricKind parse_metric_kind(std::string_view name) {
  if (name == "accuracy") return MetricKind::Accuracy;
  if (name == "rouge-l") return MetricKind::RougeL;
  if (name == "f1") return MetricKind::F1;
  throw ConfigError("unknown metric kind '" + std::string(name) + "'");
}

bool is_known_task(std::string_view tag) {
  return tag == "qa-accuracy" || tag == "qa-rouge" || tag == "dialogue-f1";
}

TaskSpec TaskSpec::for_tag(std::string_view tag) {
  if (tag == "qa-accuracy") return {std::string(tag), MetricKind::Accuracy, 32};
  if (tag == "qa-rouge") return {std::string(tag), MetricKind::RougeL, 100};
  if (tag == "dialogue-f1") return {std::string(tag), MetricKind::F1, 32};
  throw ConfigError("unknown task tag '" + std::string(tag) + "'");
}

void validate_record(const QueryRecord& record, std::size_t line) {
  if (record.id.empty()) throw DatasetError("field 'id' is empty", line);
  if (record.answers.empty()) throw DatasetError("field 'answers' is empty", line);
  for (const auto& a : record.answers) {
    if (normalize_text(a).empty())
      throw DatasetError("answer '" + a + "' is empty after normalization", line);
  }
  if (!is_known_task(record.task))
    throw DatasetError("field 'task' has unknown tag '" + record.task + "'", line);
  std::set<std::string> seen;
  int expected_min = 1;
  for (const auto& d : record.docs) {
    if (d.text.empty()) throw DatasetError("document '" + d.doc_id + "' has empty text", line);
    if (d.rank < expected_min)
      throw DatasetError("document '" + d.doc_id + "' rank " + std::to_string(d.rank) +
                             " breaks strictly increasing order",
                         line);
    expected_min = d.rank + 1;
    if (!seen.insert(d.doc_id).second)
      throw DatasetError("duplicate doc id '" + d.doc_id + "'", line);
  }
  if (!record.docs.empty() && record.docs.front().rank != 1)
    throw DatasetError("document ranks must start at 1", line);
}

namespace {

const ojson& require(const ojson& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) throw DatasetError(std::string("missing required field '") + field + "'", line);
  return *it;
}

std::string require_string(const ojson& obj, const char* field, std::size_t line) {
  const auto& v = require(obj, field, line);
  if (!v.is_string()) throw DatasetError(std::string("field '") + field + "' must be a string", line);
  return v.get<std::string>();
}

}  // namespace

QueryRecord parse_record(std::string_view line, std::size_t line_no) {
  ojson obj;
  try {
    obj = ojson::parse(line);
  } catch (const ojson::parse_error& e) {
    throw DatasetError(std::string("malformed record: ") + e.what(), line_no);
  }
  if (!obj.is_object()) throw DatasetError("record must be an object", line_no);

  QueryRecord r;
  r.id = require_string(obj, "id", line_no);
  r.query = require_string(obj, "query", line_no);
  const auto& answers = require(obj, "answers", line_no);
  if (!answers.is_array()) throw DatasetError("field 'answers' must be an array", line_no);
  for (const auto& a : answers) {
    if (!a.is_string()) throw DatasetError("field 'answers' must hold strings", line_no);
    r.answers.push_back(a.get<std::string>());
  }
  r.task = require_string(obj, "task", line_no);
  const auto& docs = require(obj, "docs", line_no);
  if (!docs.is_array()) throw DatasetError("field 'docs' must be an array", line_no);
  for (const auto& d : docs) {
    if (!d.is_object()) throw DatasetError("document must be an object", line_no);
    Document doc;
    doc.doc_id = require_string(d, "doc_id", line_no);
    doc.text = require_string(d, "text", line_no);
    const auto& rank = require(d, "rank", line_no);
    if (!rank.is_number_integer()) throw DatasetError("field 'rank' must be an integer", line_no);
    doc.rank = rank.get<int>();
    if (auto it = d.find("score"); it != d.end() && !it->is_null()) {
      if (!it->is_number()) throw DatasetError("field 'score' must be a number", line_no);
      doc.score = it->get<double>();
    }
    r.docs.push_back(std::move(doc));
  }
  validate_record(r, line_no);
  return r;
}

std::string serialize_record(const QueryRecord& record) {
  ojson obj;
  obj["id"] = record.id;
  obj["query"] = record.query;
  obj["answers"] = record.answers;
  obj["task"] = record.task;
  obj["docs"] = ojson::array();
  for (const auto& d : record.docs) {
    ojson doc;
    doc["doc_id"] = d.doc_id;
    doc["text"] = d.text;
    doc["rank"] = d.rank;
    if (d.score) doc["score"] = *d.score;
    obj["docs"].push_back(std::move(doc));
  }
  return obj.dump();
}

std::vector<QueryRecord> read_dataset(std::istream& in) {
  std::vector<QueryRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    out.push_back(parse_record(line, line_no));
  }
  return out;
}

std::vector<QueryRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset '" + path.string() + "'");
  return read_dataset(in);
}

void write_dataset(std::ostream& out, const std::vector<QueryRecord>& records) {
  for (const auto& r : records) out << serialize_record(r) << '\n';
}

void save_dataset(const std::filesystem::path& path, const std::vector<QueryRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write dataset '" + path.string() + "'");
  write_dataset(out, records);
}

// ---------------------------------------------------------------------------

std::string_view to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::WithDocs: return "with-docs";
    case PromptMode::QueryOnly: return "query-only";
    case PromptMode::RefineJudge: return "refine-judge";
  }
  return "with-docs";
}

namespace {
constexpr std::string_view kDocs = "{Documents}";
constexpr std::string_view kInstr = "{Instruction}";
constexpr std::string_view kQuery = "{Query}";

bool contains(std::string_view s, std::string_view needle) {
  return s.find(needle) != std::string_view::npos;
}

std::string render(std::string_view layout, std::string_view documents,
                   std::string_view instruction, std::string_view query) {
  std::string out;
  std::size_t i = 0;
  while (i < layout.size()) {
    auto rest = layout.substr(i);
    if (rest.starts_with(kDocs)) {
      out += documents;
      i += kDocs.size();
    } else if (rest.starts_with(kInstr)) {
      out += instruction;
      i += kInstr.size();
    } else if (rest.starts_with(kQuery)) {
      out += query;
      i += kQuery.size();
    } else {
      out += layout[i++];
    }
  }
  return out;
}
}  // namespace

void PromptTemplate::validate() const {
  switch (mode) {
    case PromptMode::WithDocs:
    case PromptMode::RefineJudge:
      if (!contains(layout, kDocs) || !contains(layout, kInstr))
        throw ConfigError(std::string(to_string(mode)) +
                          " layout needs {Documents} and {Instruction}");
      break;
    case PromptMode::QueryOnly:
      if (!contains(layout, kInstr) || contains(layout, kDocs))
        throw ConfigError("query-only layout needs {Instruction} and no {Documents}");
      break;
  }
  if (contains(fallback_layout, kDocs)) throw ConfigError("fallback layout cannot use {Documents}");
}

PromptTemplate PromptTemplate::with_docs(std::string instruction) {
  return {PromptMode::WithDocs, std::move(instruction),
          "Background:\n{Documents}\n{Instruction}\n{Query}"};
}

PromptTemplate PromptTemplate::query_only(std::string instruction) {
  return {PromptMode::QueryOnly, std::move(instruction), "{Instruction}\n{Query}"};
}

PromptTemplate PromptTemplate::refine_judge(std::string instruction) {
  return {PromptMode::RefineJudge, std::move(instruction),
          "{Instruction}\n{Documents}\nQuestion:\n{Query}"};
}

std::string truncate_tokens(std::string_view text, std::size_t budget) {
  if (budget == 0) return std::string(text);
  auto tokens = split_whitespace(text);
  if (tokens.size() <= budget) return std::string(text);
  tokens.resize(budget);
  return join(tokens, " ");
}

std::string build_prompt(const PromptTemplate& tmpl, const std::vector<Document>& docs,
                         std::string_view query) {
  if (tmpl.mode == PromptMode::QueryOnly || docs.empty())
    return render(tmpl.mode == PromptMode::QueryOnly ? tmpl.layout : tmpl.fallback_layout, {},
                  tmpl.instruction, query);

  std::vector<const Document*> ordered;
  ordered.reserve(docs.size());
  for (const auto& d : docs) ordered.push_back(&d);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Document* a, const Document* b) { return a->rank < b->rank; });
  std::string joined;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (i) joined += '\n';
    joined += truncate_tokens(ordered[i]->text, tmpl.doc_token_budget);
  }
  return render(tmpl.layout, joined, tmpl.instruction, query);
}

}  // namespace ddr
