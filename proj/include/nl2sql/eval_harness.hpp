#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "nl2sql/corpus_gen.hpp"
#include "nl2sql/sql_ast.hpp"
#include "nl2sql/table_store.hpp"

namespace nl2sql {

struct Candidate {
  SqlQuery query;
  double log_prob = 0.0;
};

struct Prediction {
  GoldLabel label = Rejection{};
  // Values predicted with the gold condition columns and operators, parallel
  // to the gold conditions. Empty when the gold label is a rejection.
  std::vector<std::string> gold_context_values;
  // Plain decode first, then alternatives by descending joint log-probability.
  std::vector<Candidate> candidates;
  double reject_prob = 0.0;
  nlohmann::json heads = nlohmann::json::object();
};

// Prediction JSONL line: the example fields (table_id, question, category,
// split) plus the predicted "answerable"/"sql" and metadata fields.
nlohmann::json prediction_to_json(const Prediction& p, const Example& source);
Prediction prediction_from_json(const nlohmann::json& j);

enum class Subtask { SNum, SCol, SAgg, WNum, WCol, WOp, WValue, WRel };
inline constexpr std::array<Subtask, 8> kSubtasks = {Subtask::SNum, Subtask::SCol, Subtask::SAgg,
                                                     Subtask::WNum, Subtask::WCol, Subtask::WOp,
                                                     Subtask::WValue, Subtask::WRel};
std::string_view subtask_name(Subtask s);

struct MetricsReport {
  std::size_t examples = 0;
  std::size_t answerable = 0;
  std::size_t unanswerable = 0;
  // Indexed by Subtask. W-Value uses gold condition columns and operators.
  std::array<double, 8> subtask{};
  // W-Value with predicted columns and operators.
  double w_value_end_to_end = 0.0;
  double logic_form_acc = 0.0;
  double execution_acc = 0.0;
  double reject_precision = 0.0;
  double reject_recall = 0.0;
  double reject_f1 = 0.0;
  std::size_t true_rejects = 0;
  std::size_t false_rejects = 0;
  std::size_t missed_rejects = 0;

  double at(Subtask s) const { return subtask[static_cast<std::size_t>(s)]; }
};

// Predicted labels and gold examples must be aligned; throws ContractViolation
// otherwise. Tables are looked up by the gold example's table id.
MetricsReport score(const std::vector<Prediction>& predictions,
                    const std::vector<Example>& golds, const TableSet& tables);

// True when the query validates, executes without error and returns rows.
bool executes_nonempty(const SqlQuery& q, const Table& t);

// First of the leading `budget` candidates that executes to a nonempty
// result; the top candidate when none does. Never a rejection.
SqlQuery egd_select(const std::vector<Candidate>& candidates, const Table& t,
                    std::size_t budget);
// The prediction with its label replaced by egd_select's choice.
Prediction egd_decode(const Prediction& p, const Table& t, std::size_t budget);

nlohmann::json report_to_json(const MetricsReport& r);
std::string report_to_markdown(const MetricsReport& r, const std::string& title);

struct ResolverRow {
  std::string resolver;
  MetricsReport report;
};

class ParserModel;

// Scores one model under every value resolver (span, offline, end2end).
std::vector<ResolverRow> compare_resolvers(const ParserModel& model,
                                           const std::vector<Example>& examples,
                                           const TableSet& tables);

// One row per resolver with the subtask columns, W-Value in both regimes and
// logic form.
std::string ablation_markdown(const std::vector<ResolverRow>& rows);
nlohmann::json ablation_to_json(const std::vector<ResolverRow>& rows);

}  // namespace nl2sql
