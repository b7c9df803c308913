#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ddr {

struct Document {
  std::string doc_id;
  std::string text;
  int rank = 1;
  std::optional<double> score;

  friend bool operator==(const Document&, const Document&) = default;
};

enum class MetricKind { Accuracy, RougeL, F1 };

std::string_view to_string(MetricKind kind);
/// Throws ConfigError on unknown names.
MetricKind parse_metric_kind(std::string_view name);

/// Task tags understood by the loader: qa-accuracy, qa-rouge, dialogue-f1.
struct TaskSpec {
  std::string tag;
  MetricKind metric = MetricKind::Accuracy;
  int max_generation_tokens = 32;

  /// Default spec for a tag: qa-rouge decodes up to 100 tokens, everything
  /// else 32. Throws ConfigError for unknown tags.
  static TaskSpec for_tag(std::string_view tag);
};

bool is_known_task(std::string_view tag);

struct QueryRecord {
  std::string id;
  std::string query;
  std::vector<std::string> answers;
  std::string task;
  std::vector<Document> docs;

  friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

/// Checks the record invariants (non-empty answers, ranks strictly increasing
/// from 1, unique doc ids, non-empty doc text). Throws DatasetError.
void validate_record(const QueryRecord& record, std::size_t line = 0);

/// Parses one line of the dataset format.
QueryRecord parse_record(std::string_view line, std::size_t line_no = 0);
std::string serialize_record(const QueryRecord& record);

std::vector<QueryRecord> load_dataset(const std::filesystem::path& path);
std::vector<QueryRecord> read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const std::vector<QueryRecord>& records);
void write_dataset(std::ostream& out, const std::vector<QueryRecord>& records);

// ---------------------------------------------------------------------------
// Prompt construction

enum class PromptMode { WithDocs, QueryOnly, RefineJudge };

std::string_view to_string(PromptMode mode);

/// A prompt layout with `{Documents}`, `{Instruction}` and `{Query}`
/// placeholders. Documents are newline-joined in rank order.
struct PromptTemplate {
  PromptMode mode = PromptMode::WithDocs;
  std::string instruction;
  std::string layout;
  /// Used by with-docs templates when the document list is empty.
  std::string fallback_layout = "{Instruction}\n{Query}";
  /// Each document is cut to this many whitespace tokens; 0 disables.
  std::size_t doc_token_budget = 256;

  /// Throws ConfigError when the layout does not match the mode.
  void validate() const;

  static PromptTemplate with_docs(std::string instruction);
  static PromptTemplate query_only(std::string instruction);
  static PromptTemplate refine_judge(std::string instruction);
};

inline constexpr std::string_view kDefaultGenInstruction =
    "Answer the question using the background when it helps.\nQuestion:";
inline constexpr std::string_view kDefaultRefineInstruction =
    "Judge whether the document helps answer the question. Reply YES to retain it or NO to "
    "discard it.\nDocument:";
inline constexpr std::string_view kDefaultSummaryInstruction =
    "Summarize the background facts relevant to the question.\nQuestion:";

/// Pure function of its arguments. Documents are sorted by rank before
/// assembly; a with-docs template with no documents renders its fallback.
std::string build_prompt(const PromptTemplate& tmpl, const std::vector<Document>& docs,
                         std::string_view query);

/// Truncates to the first `budget` whitespace tokens (re-joined by single
/// spaces). Text already within budget is returned unchanged.
std::string truncate_tokens(std::string_view text, std::size_t budget);

}  // namespace ddr
