#include "nl2sql/eval_harness.hpp"

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

#include "nl2sql/errors.hpp"
#include "nl2sql/numeric.hpp"
#include "nl2sql/parser_model.hpp"
#include "nl2sql/sql_exec.hpp"

namespace nl2sql {

using nlohmann::json;

// ---- prediction records ------------------------------------------------------

json prediction_to_json(const Prediction& p, const Example& source) {
  json cands = json::array();
  for (const auto& c : p.candidates) {
    cands.push_back(json{{"sql", sql_to_json(c.query)}, {"logp", c.log_prob}});
  }
  const bool answerable = !is_rejection(p.label);
  return json{{"table_id", source.table_id},
              {"question", source.question},
              {"answerable", answerable},
              {"sql", answerable ? sql_to_json(std::get<SqlQuery>(p.label)) : json(nullptr)},
              {"category", category_name(source.category)},
              {"split", split_name(source.split)},
              {"reject_prob", p.reject_prob},
              {"gold_context_values", p.gold_context_values},
              {"candidates", cands},
              {"heads", p.heads}};
}

Prediction prediction_from_json(const json& j) {
  try {
    Prediction p;
    if (j.at("answerable").get<bool>()) {
      p.label = sql_from_json(j.at("sql"));
    } else {
      p.label = Rejection{};
    }
    p.reject_prob = j.value("reject_prob", 0.0);
    if (j.contains("gold_context_values")) {
      p.gold_context_values = j.at("gold_context_values").get<std::vector<std::string>>();
    }
    if (j.contains("candidates")) {
      for (const auto& c : j.at("candidates")) {
        p.candidates.push_back({sql_from_json(c.at("sql")), c.at("logp").get<double>()});
      }
    }
    if (j.contains("heads")) p.heads = j.at("heads");
    return p;
  } catch (const json::exception& e) {
    throw ParseError(std::string("prediction: ") + e.what());
  }
}

std::string_view subtask_name(Subtask s) {
  switch (s) {
    case Subtask::SNum: return "S-Num";
    case Subtask::SCol: return "S-Col";
    case Subtask::SAgg: return "S-Agg";
    case Subtask::WNum: return "W-Num";
    case Subtask::WCol: return "W-Col";
    case Subtask::WOp: return "W-Op";
    case Subtask::WValue: return "W-Value";
    case Subtask::WRel: return "W-R";
  }
  return "?";
}

// ---- scoring -----------------------------------------------------------------

namespace {

std::string value_key(const std::string& value, int col, const Table& t) {
  if (col >= 0 && static_cast<std::size_t>(col) < t.column_count() &&
      t.columns[static_cast<std::size_t>(col)].dtype == DType::Real) {
    return canonical_value(value);
  }
  return nfc(value);
}

std::multiset<int> select_columns(const SqlQuery& q) {
  std::multiset<int> s;
  for (const auto& it : q.select) s.insert(it.column);
  return s;
}
std::multiset<int> aggs(const SqlQuery& q) {
  std::multiset<int> s;
  for (const auto& it : q.select) s.insert(static_cast<int>(it.agg));
  return s;
}
std::set<int> where_columns(const SqlQuery& q) {
  std::set<int> s;
  for (const auto& c : q.conditions) s.insert(c.column);
  return s;
}
std::multiset<int> ops(const SqlQuery& q) {
  std::multiset<int> s;
  for (const auto& c : q.conditions) s.insert(static_cast<int>(c.op));
  return s;
}
std::multiset<std::string> values(const SqlQuery& q, const Table& t) {
  std::multiset<std::string> s;
  for (const auto& c : q.conditions) s.insert(value_key(c.value, c.column, t));
  return s;
}
Connector connector_of(const SqlQuery& q) {
  return q.conditions.size() <= 1 ? Connector::None : q.connector;
}

bool execution_match(const GoldLabel& pred, const GoldLabel& gold, const Table& t) {
  if (is_rejection(gold)) return is_rejection(pred);
  if (is_rejection(pred)) return false;
  const auto& p = std::get<SqlQuery>(pred);
  const auto& g = std::get<SqlQuery>(gold);
  if (!validate(p, t).empty()) return false;
  try {
    return result_equal(execute(p, t), execute(g, t));
  } catch (const TypeError&) {
    return false;
  }
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport score(const std::vector<Prediction>& predictions,
                    const std::vector<Example>& golds, const TableSet& tables) {
  if (predictions.size() != golds.size()) {
    throw ContractViolation("score: " + std::to_string(predictions.size()) +
                            " predictions for " + std::to_string(golds.size()) + " gold examples");
  }
  MetricsReport r;
  r.examples = golds.size();
  std::array<std::size_t, 8> hits{};
  std::size_t value_e2e = 0, lf = 0, ex = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const Example& gold = golds[i];
    const Prediction& pred = predictions[i];
    const Table& t = tables.at(gold.table_id);
    const bool rejected = is_rejection(pred.label);

    if (logic_form_equal(pred.label, gold.gold, t)) ++lf;
    if (execution_match(pred.label, gold.gold, t)) ++ex;

    if (!gold.answerable()) {
      ++r.unanswerable;
      if (rejected) {
        ++r.true_rejects;
      } else {
        ++r.missed_rejects;
      }
      continue;
    }
    ++r.answerable;
    if (rejected) ++r.false_rejects;

    const SqlQuery& g = gold.sql();
    if (pred.gold_context_values.size() == g.conditions.size()) {
      bool all = true;
      for (std::size_t k = 0; k < g.conditions.size(); ++k) {
        const auto& c = g.conditions[k];
        all = all && value_key(pred.gold_context_values[k], c.column, t) ==
                         value_key(c.value, c.column, t);
      }
      if (all) ++hits[static_cast<std::size_t>(Subtask::WValue)];
    }
    if (rejected) continue;
    const SqlQuery& p = std::get<SqlQuery>(pred.label);
    auto hit = [&](Subtask s, bool ok) {
      if (ok) ++hits[static_cast<std::size_t>(s)];
    };
    hit(Subtask::SNum, p.select.size() == g.select.size());
    hit(Subtask::SCol, select_columns(p) == select_columns(g));
    hit(Subtask::SAgg, aggs(p) == aggs(g));
    hit(Subtask::WNum, p.conditions.size() == g.conditions.size());
    hit(Subtask::WCol, where_columns(p) == where_columns(g));
    hit(Subtask::WOp, ops(p) == ops(g));
    hit(Subtask::WRel, connector_of(p) == connector_of(g));
    if (values(p, t) == values(g, t)) ++value_e2e;
  }
  for (std::size_t s = 0; s < hits.size(); ++s) r.subtask[s] = ratio(hits[s], r.answerable);
  r.w_value_end_to_end = ratio(value_e2e, r.answerable);
  r.logic_form_acc = ratio(lf, r.examples);
  r.execution_acc = ratio(ex, r.examples);
  r.reject_precision = ratio(r.true_rejects, r.true_rejects + r.false_rejects);
  r.reject_recall = ratio(r.true_rejects, r.unanswerable);
  const double pr = r.reject_precision + r.reject_recall;
  r.reject_f1 = pr > 0.0 ? 2.0 * r.reject_precision * r.reject_recall / pr : 0.0;
  return r;
}

// ---- execution-guided decoding ----------------------------------------------

bool executes_nonempty(const SqlQuery& q, const Table& t) {
  if (!validate(q, t).empty()) return false;
  try {
    return !execute(q, t).empty();
  } catch (const TypeError&) {
    return false;
  }
}

SqlQuery egd_select(const std::vector<Candidate>& candidates, const Table& t,
                    std::size_t budget) {
  if (candidates.empty()) throw ContractViolation("egd_select: no candidates");
  const std::size_t n = std::min(budget, candidates.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (executes_nonempty(candidates[i].query, t)) return candidates[i].query;
  }
  return candidates.front().query;
}

Prediction egd_decode(const Prediction& p, const Table& t, std::size_t budget) {
  Prediction out = p;
  out.label = egd_select(p.candidates, t, budget);
  return out;
}

// ---- reports -----------------------------------------------------------------

json report_to_json(const MetricsReport& r) {
  json sub = json::object();
  for (Subtask s : kSubtasks) sub[std::string(subtask_name(s))] = r.at(s);
  return json{{"examples", r.examples},
              {"answerable", r.answerable},
              {"unanswerable", r.unanswerable},
              {"subtask_accuracy", sub},
              {"w_value_regime", "gold condition columns and operators"},
              {"w_value_end_to_end", r.w_value_end_to_end},
              {"logic_form_acc", r.logic_form_acc},
              {"execution_acc", r.execution_acc},
              {"answerability",
               {{"precision", r.reject_precision},
                {"recall", r.reject_recall},
                {"f1", r.reject_f1},
                {"true_rejects", r.true_rejects},
                {"false_rejects", r.false_rejects},
                {"missed_rejects", r.missed_rejects}}}};
}

namespace {

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << 100.0 * v;
  return os.str();
}

std::string f3(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

}  // namespace

std::string report_to_markdown(const MetricsReport& r, const std::string& title) {
  std::ostringstream os;
  os << "## " << title << "\n\n";
  os << r.examples << " examples (" << r.answerable << " answerable, " << r.unanswerable
     << " unanswerable).\n\n";
  os << "|";
  for (Subtask s : kSubtasks) os << ' ' << subtask_name(s) << " |";
  os << " Logic Form | Execution |\n|";
  for (std::size_t i = 0; i < kSubtasks.size() + 2; ++i) os << "---|";
  os << "\n|";
  for (Subtask s : kSubtasks) os << ' ' << pct(r.at(s)) << " |";
  os << ' ' << pct(r.logic_form_acc) << " | " << pct(r.execution_acc) << " |\n\n";
  os << "W-Value above uses the gold condition columns and operators; with predicted ones it is "
     << pct(r.w_value_end_to_end) << ".\n\n";
  os << "Answerability (rejected class): precision " << f3(r.reject_precision) << ", recall "
     << f3(r.reject_recall) << ", F1 " << f3(r.reject_f1) << ".\n";
  return os.str();
}

std::string ablation_markdown(const std::vector<ResolverRow>& rows) {
  std::ostringstream os;
  os << "| Resolver |";
  for (Subtask s : kSubtasks) os << ' ' << subtask_name(s) << " |";
  os << " W-Value (end-to-end) | Logic Form |\n|---|";
  for (std::size_t i = 0; i < kSubtasks.size() + 2; ++i) os << "---|";
  os << '\n';
  for (const auto& row : rows) {
    os << "| " << row.resolver << " |";
    for (Subtask s : kSubtasks) os << ' ' << pct(row.report.at(s)) << " |";
    os << ' ' << pct(row.report.w_value_end_to_end) << " | " << pct(row.report.logic_form_acc)
       << " |\n";
  }
  return os.str();
}

json ablation_to_json(const std::vector<ResolverRow>& rows) {
  json out = json::array();
  for (const auto& row : rows) {
    json j = report_to_json(row.report);
    j["resolver"] = row.resolver;
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<ResolverRow> compare_resolvers(const ParserModel& model,
                                           const std::vector<Example>& examples,
                                           const TableSet& tables) {
  std::vector<ResolverRow> rows;
  for (Resolver r : {Resolver::SpanOnly, Resolver::Offline, Resolver::End2End}) {
    std::vector<Prediction> preds;
    preds.reserve(examples.size());
    for (const auto& ex : examples) preds.push_back(model.predict(ex, tables.at(ex.table_id), r));
    rows.push_back({std::string(resolver_name(r)), score(preds, examples, tables)});
  }
  return rows;
}

}  // namespace nl2sql
