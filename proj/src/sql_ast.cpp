#include "nl2sql/sql_ast.hpp"

#include <algorithm>

#include "nl2sql/errors.hpp"
#include "nl2sql/numeric.hpp"

namespace nl2sql {

using nlohmann::json;

std::string_view agg_name(Agg agg) {
  switch (agg) {
    case Agg::None: return "";
    case Agg::Avg: return "AVG";
    case Agg::Max: return "MAX";
    case Agg::Min: return "MIN";
    case Agg::Count: return "COUNT";
    case Agg::Sum: return "SUM";
  }
  return "?";
}

std::string_view op_symbol(CondOp op) {
  switch (op) {
    case CondOp::Gt: return ">";
    case CondOp::Lt: return "<";
    case CondOp::Eq: return "==";
    case CondOp::Neq: return "!=";
  }
  return "?";
}

std::string_view connector_name(Connector conn) {
  switch (conn) {
    case Connector::None: return "";
    case Connector::And: return "AND";
    case Connector::Or: return "OR";
  }
  return "?";
}

std::string canonical_value(std::string_view value) {
  if (auto num = parse_number(value)) return render_number(*num);
  return std::string(value);
}

namespace {

SqlQuery canonicalize_impl(const SqlQuery& q, const Table* table) {
  SqlQuery out;
  out.select = q.select;
  std::sort(out.select.begin(), out.select.end());

  out.conditions = q.conditions;
  for (auto& cond : out.conditions) {
    bool render = true;
    if (table != nullptr) {
      render = cond.column >= 0 &&
               static_cast<std::size_t>(cond.column) < table->column_count() &&
               table->columns[cond.column].dtype == DType::Real;
    }
    if (render) cond.value = canonical_value(cond.value);
  }
  std::sort(out.conditions.begin(), out.conditions.end());
  out.conditions.erase(std::unique(out.conditions.begin(), out.conditions.end()), out.conditions.end());
  out.connector = out.conditions.size() <= 1 ? Connector::None : q.connector;
  return out;
}

}  // namespace

SqlQuery canonicalize(const SqlQuery& q) { return canonicalize_impl(q, nullptr); }

SqlQuery canonicalize(const SqlQuery& q, const Table& table) {
  return canonicalize_impl(q, &table);
}

bool logic_form_equal(const GoldLabel& a, const GoldLabel& b) {
  if (is_rejection(a) || is_rejection(b)) return is_rejection(a) && is_rejection(b);
  return canonicalize(std::get<SqlQuery>(a)) == canonicalize(std::get<SqlQuery>(b));
}

bool logic_form_equal(const GoldLabel& a, const GoldLabel& b, const Table& table) {
  if (is_rejection(a) || is_rejection(b)) return is_rejection(a) && is_rejection(b);
  return canonicalize(std::get<SqlQuery>(a), table) ==
         canonicalize(std::get<SqlQuery>(b), table);
}

std::vector<std::string> validate(const SqlQuery& q, const Table& table) {
  std::vector<std::string> violations;
  const auto ncols = static_cast<int>(table.column_count());
  if (q.select.empty()) violations.emplace_back("select list is empty");
  for (const auto& item : q.select) {
    if (item.column < 0 || item.column >= ncols) {
      violations.push_back("column index out of range: select column " +
                           std::to_string(item.column));
    }
    if (static_cast<int>(item.agg) < 0 || static_cast<int>(item.agg) >= kAggCount) {
      violations.emplace_back("unknown aggregation code");
    }
  }
  for (const auto& cond : q.conditions) {
    if (cond.column < 0 || cond.column >= ncols) {
      violations.push_back("column index out of range: condition column " +
                           std::to_string(cond.column));
      continue;
    }
    if (static_cast<int>(cond.op) < 0 || static_cast<int>(cond.op) >= kCondOpCount) {
      violations.emplace_back("unknown condition operator code");
    }
    if (cond.value.empty()) {
      violations.push_back("empty condition value on column " + std::to_string(cond.column));
    } else if (table.columns[cond.column].dtype == DType::Real &&
               !parse_number(cond.value)) {
      violations.push_back("non-numeric value '" + cond.value + "' on REAL column " +
                           std::to_string(cond.column));
    }
  }
  bool multi = q.conditions.size() > 1;
  if (multi && q.connector == Connector::None) {
    violations.emplace_back("several conditions without a connector");
  }
  return violations;
}

json sql_to_json(const SqlQuery& q) {
  json sel = json::array();
  json agg = json::array();
  for (const auto& item : q.select) {
    sel.push_back(item.column);
    agg.push_back(static_cast<int>(item.agg));
  }
  json conds = json::array();
  for (const auto& c : q.conditions) {
    conds.push_back(json::array({c.column, static_cast<int>(c.op), c.value}));
  }
  return json{{"sel", std::move(sel)},
              {"agg", std::move(agg)},
              {"cond_conn_op", static_cast<int>(q.connector)},
              {"conds", std::move(conds)}};
}

SqlQuery sql_from_json(const json& j) {
  try {
    SqlQuery q;
    const auto& sel = j.at("sel");
    const auto& agg = j.at("agg");
    if (sel.size() != agg.size()) throw ParseError("sql: sel and agg differ in length");
    for (std::size_t i = 0; i < sel.size(); ++i) {
      int code = agg[i].get<int>();
      if (code < 0 || code >= kAggCount) throw ParseError("sql: bad agg code");
      q.select.push_back({sel[i].get<int>(), static_cast<Agg>(code)});
    }
    int conn = j.value("cond_conn_op", 0);
    if (conn < 0 || conn >= kConnectorCount) throw ParseError("sql: bad connector code");
    q.connector = static_cast<Connector>(conn);
    if (j.contains("conds")) {
      for (const auto& c : j.at("conds")) {
        if (!c.is_array() || c.size() != 3) throw ParseError("sql: condition must be [col, op, value]");
        int op = c[1].get<int>();
        if (op < 0 || op >= kCondOpCount) throw ParseError("sql: bad operator code");
        std::string value = c[2].is_string() ? c[2].get<std::string>() : c[2].dump();
        q.conditions.push_back({c[0].get<int>(), static_cast<CondOp>(op), std::move(value)});
      }
    }
    return q;
  } catch (const json::exception& e) {
    throw ParseError(std::string("sql: ") + e.what());
  }
}

std::string to_sql_string(const SqlQuery& q, const Table& table) {
  auto col_name = [&](int c) {
    if (c >= 0 && static_cast<std::size_t>(c) < table.column_count()) {
      return table.columns[c].name;
    }
    return "col" + std::to_string(c);
  };
  std::string out = "SELECT ";
  for (std::size_t i = 0; i < q.select.size(); ++i) {
    if (i) out += ", ";
    const auto& item = q.select[i];
    if (item.agg == Agg::None) {
      out += col_name(item.column);
    } else {
      out += std::string(agg_name(item.agg)) + "(" + col_name(item.column) + ")";
    }
  }
  out += " FROM " + (table.name.empty() ? table.id : table.name);
  for (std::size_t i = 0; i < q.conditions.size(); ++i) {
    out += i == 0 ? " WHERE " : " " + std::string(connector_name(q.connector)) + " ";
    const auto& c = q.conditions[i];
    out += col_name(c.column) + " " + std::string(op_symbol(c.op)) + " \"" + c.value + "\"";
  }
  return out;
}

}  // namespace nl2sql
