#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "nl2sql/table_store.hpp"

namespace nl2sql {

// Integer codes are part of the SQL JSON contract.
enum class Agg : int { None = 0, Avg = 1, Max = 2, Min = 3, Count = 4, Sum = 5 };
enum class CondOp : int { Gt = 0, Lt = 1, Eq = 2, Neq = 3 };
enum class Connector : int { None = 0, And = 1, Or = 2 };

inline constexpr int kAggCount = 6;
inline constexpr int kCondOpCount = 4;
inline constexpr int kConnectorCount = 3;

std::string_view agg_name(Agg agg);
std::string_view op_symbol(CondOp op);
std::string_view connector_name(Connector conn);

struct SelectItem {
  int column = 0;
  Agg agg = Agg::None;

  auto operator<=>(const SelectItem&) const = default;
};

struct Condition {
  int column = 0;
  CondOp op = CondOp::Eq;
  // Numeric literals stay text here; the executor parses them.
  std::string value;

  auto operator<=>(const Condition&) const = default;
};

struct SqlQuery {
  std::vector<SelectItem> select;
  Connector connector = Connector::None;
  std::vector<Condition> conditions;

  auto operator<=>(const SqlQuery&) const = default;
};

struct Rejection {
  auto operator<=>(const Rejection&) const = default;
};

using GoldLabel = std::variant<SqlQuery, Rejection>;

inline bool is_rejection(const GoldLabel& label) {
  return std::holds_alternative<Rejection>(label);
}

// Numeric-looking values are re-rendered canonically ("5.0" -> "5").
std::string canonical_value(std::string_view value);

// Sorts select items, sorts and dedupes conditions, renders numeric values
// canonically and sets the connector to NONE when at most one condition
// remains. Duplicate select items are kept because they widen the result.
SqlQuery canonicalize(const SqlQuery& q);

// Same, but only values of REAL columns are re-rendered, so TEXT cells that
// happen to look numeric ("007") keep their exact spelling.
SqlQuery canonicalize(const SqlQuery& q, const Table& table);

bool logic_form_equal(const GoldLabel& a, const GoldLabel& b);
bool logic_form_equal(const GoldLabel& a, const GoldLabel& b, const Table& table);

// Empty result means the query is valid for the table.
std::vector<std::string> validate(const SqlQuery& q, const Table& table);

nlohmann::json sql_to_json(const SqlQuery& q);
SqlQuery sql_from_json(const nlohmann::json& j);

// SELECT AVG(price) FROM t WHERE city == "x" -- for logs and reports.
std::string to_sql_string(const SqlQuery& q, const Table& table);

}  // namespace nl2sql
