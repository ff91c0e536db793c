#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "nl2sql/sql_ast.hpp"
#include "nl2sql/table_store.hpp"

namespace nl2sql {

using Value = Cell;

struct ResultSet {
  std::vector<std::string> columns;
  std::vector<std::vector<Value>> rows;

  bool empty() const { return rows.empty(); }
};

inline constexpr double kResultTolerance = 1e-9;

// Throws TypeError for GT/LT on TEXT and for an unparseable numeric literal.
bool condition_matches(const Cell& cell, const Condition& cond, DType dtype);

// Row indices satisfying the WHERE clause, in table order.
std::vector<std::size_t> matching_rows(const SqlQuery& q, const Table& table);

// Throws ContractViolation when validate() reports anything and TypeError for
// AVG/SUM/MAX/MIN over a TEXT column.
ResultSet execute(const SqlQuery& q, const Table& table);

// Order-insensitive multiset comparison; reals compare within kResultTolerance.
// Columns are put into output-label order first, so select order is ignored.
bool result_equal(const ResultSet& a, const ResultSet& b);

nlohmann::json result_to_json(const ResultSet& rs);

}  // namespace nl2sql
