#include "nl2sql/sql_exec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nl2sql/errors.hpp"
#include "nl2sql/numeric.hpp"

namespace nl2sql {

bool condition_matches(const Cell& cell, const Condition& cond, DType dtype) {
  if (dtype == DType::Real) {
    auto rhs = parse_number(cond.value);
    if (!rhs) throw TypeError("unparseable numeric literal '" + cond.value + "'");
    const auto* lhs = std::get_if<double>(&cell);
    if (lhs == nullptr) throw TypeError("REAL condition applied to a text cell");
    switch (cond.op) {
      case CondOp::Gt: return *lhs > *rhs;
      case CondOp::Lt: return *lhs < *rhs;
      case CondOp::Eq: return *lhs == *rhs;
      case CondOp::Neq: return *lhs != *rhs;
    }
    return false;
  }
  if (cond.op == CondOp::Gt || cond.op == CondOp::Lt) {
    throw TypeError("operator " + std::string(op_symbol(cond.op)) +
                    " is not defined on TEXT columns");
  }
  bool same = nfc(cell_to_string(cell)) == nfc(cond.value);
  return cond.op == CondOp::Eq ? same : !same;
}

std::vector<std::size_t> matching_rows(const SqlQuery& q, const Table& table) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < table.row_count(); ++r) {
    const auto& row = table.rows[r];
    bool keep = q.connector != Connector::Or || q.conditions.empty();
    for (const auto& cond : q.conditions) {
      bool m = condition_matches(row[cond.column], cond, table.columns[cond.column].dtype);
      if (q.connector == Connector::Or) {
        keep = keep || m;
      } else {
        keep = keep && m;
      }
    }
    if (keep) out.push_back(r);
  }
  return out;
}

namespace {

std::string output_label(const SelectItem& item, const Table& table) {
  const std::string& name = table.columns[item.column].name;
  if (item.agg == Agg::None) return name;
  return std::string(agg_name(item.agg)) + "(" + name + ")";
}

// Reduces one column over the matching rows; nullopt means "no value".
std::optional<Value> aggregate(Agg agg, std::size_t col, const Table& table,
                               const std::vector<std::size_t>& rows) {
  if (agg == Agg::Count) return static_cast<double>(rows.size());
  if (rows.empty()) return std::nullopt;
  double acc = agg == Agg::Max ? -std::numeric_limits<double>::infinity()
             : agg == Agg::Min ? std::numeric_limits<double>::infinity()
                               : 0.0;
  for (std::size_t r : rows) {
    double v = std::get<double>(table.rows[r][col]);
    switch (agg) {
      case Agg::Max: acc = std::max(acc, v); break;
      case Agg::Min: acc = std::min(acc, v); break;
      default: acc += v; break;
    }
  }
  if (agg == Agg::Avg) acc /= static_cast<double>(rows.size());
  return acc;
}

}  // namespace

ResultSet execute(const SqlQuery& q, const Table& table) {
  auto violations = validate(q, table);
  if (!violations.empty()) {
    throw ContractViolation("execute on an invalid query: " + violations.front());
  }
  bool any_agg = false;
  bool all_agg = true;
  for (const auto& item : q.select) {
    bool numeric = item.agg == Agg::Avg || item.agg == Agg::Sum ||
                   item.agg == Agg::Max || item.agg == Agg::Min;
    if (numeric && table.columns[item.column].dtype != DType::Real) {
      throw TypeError(std::string(agg_name(item.agg)) + " over TEXT column '" +
                      table.columns[item.column].name + "'");
    }
    any_agg = any_agg || item.agg != Agg::None;
    all_agg = all_agg && item.agg != Agg::None;
  }

  const auto rows = matching_rows(q, table);
  ResultSet rs;
  for (const auto& item : q.select) rs.columns.push_back(output_label(item, table));

  if (!any_agg) {
    for (std::size_t r : rows) {
      std::vector<Value> tuple;
      for (const auto& item : q.select) tuple.push_back(table.rows[r][item.column]);
      rs.rows.push_back(std::move(tuple));
    }
    return rs;
  }

  std::vector<std::optional<Value>> reduced;
  for (const auto& item : q.select) {
    reduced.push_back(item.agg == Agg::None
                          ? std::nullopt
                          : aggregate(item.agg, item.column, table, rows));
  }
  for (std::size_t i = 0; i < q.select.size(); ++i) {
    if (q.select[i].agg != Agg::None && !reduced[i]) return rs;
  }
  if (all_agg) {
    std::vector<Value> tuple;
    for (auto& v : reduced) tuple.push_back(*v);
    rs.rows.push_back(std::move(tuple));
    return rs;
  }
  // Mixed bare and aggregated columns: one row per match, aggregates repeated.
  for (std::size_t r : rows) {
    std::vector<Value> tuple;
    for (std::size_t i = 0; i < q.select.size(); ++i) {
      tuple.push_back(reduced[i] ? *reduced[i] : table.rows[r][q.select[i].column]);
    }
    rs.rows.push_back(std::move(tuple));
  }
  return rs;
}

namespace {

bool value_equal(const Value& a, const Value& b) {
  if (a.index() != b.index()) return false;
  if (const auto* x = std::get_if<double>(&a)) {
    return std::fabs(*x - std::get<double>(b)) <= kResultTolerance;
  }
  return nfc(std::get<std::string>(a)) == nfc(std::get<std::string>(b));
}

bool value_less(const Value& a, const Value& b) {
  if (a.index() != b.index()) return a.index() < b.index();
  if (const auto* x = std::get_if<double>(&a)) return *x < std::get<double>(b);
  return std::get<std::string>(a) < std::get<std::string>(b);
}

bool tuple_less(const std::vector<Value>& a, const std::vector<Value>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), value_less);
}

bool tuple_equal(const std::vector<Value>& a, const std::vector<Value>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), value_equal);
}

// Rows with their columns put into output-label order.
std::vector<std::vector<Value>> label_ordered(const ResultSet& rs) {
  std::vector<std::size_t> order(rs.columns.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return rs.columns[x] < rs.columns[y]; });
  std::vector<std::vector<Value>> out;
  out.reserve(rs.rows.size());
  for (const auto& row : rs.rows) {
    if (row.size() != order.size()) {
      out.push_back(row);
      continue;
    }
    std::vector<Value> r;
    r.reserve(row.size());
    for (std::size_t k : order) r.push_back(row[k]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

bool result_equal(const ResultSet& a, const ResultSet& b) {
  if (a.rows.size() != b.rows.size()) return false;
  if (a.rows.empty()) return true;
  // Greedy matching; sorting first keeps near-equal reals adjacent.
  auto lhs = label_ordered(a);
  auto rhs = label_ordered(b);
  std::sort(lhs.begin(), lhs.end(), tuple_less);
  std::sort(rhs.begin(), rhs.end(), tuple_less);
  std::vector<bool> used(rhs.size(), false);
  for (const auto& row : lhs) {
    bool found = false;
    for (std::size_t j = 0; j < rhs.size(); ++j) {
      if (!used[j] && tuple_equal(row, rhs[j])) {
        used[j] = true;
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

nlohmann::json result_to_json(const ResultSet& rs) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : rs.rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : row) {
      if (const auto* s = std::get_if<std::string>(&v)) {
        out.push_back(*s);
      } else {
        out.push_back(number_to_json(std::get<double>(v)));
      }
    }
    rows.push_back(std::move(out));
  }
  return nlohmann::json{{"columns", rs.columns}, {"rows", std::move(rows)}};
}

}  // namespace nl2sql
