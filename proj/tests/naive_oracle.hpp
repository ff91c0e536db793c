#pragma once

// Independent row-scan reference executor and random table/query fixtures
// used by the executor tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "nl2sql/numeric.hpp"
#include "nl2sql/sql_ast.hpp"
#include "nl2sql/table_store.hpp"

namespace oracle {

using nl2sql::Agg;
using nl2sql::Cell;
using nl2sql::CondOp;
using nl2sql::Connector;
using nl2sql::DType;
using nl2sql::SqlQuery;
using nl2sql::Table;

using Row = std::vector<Cell>;

inline double to_double(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

inline bool cond_holds(const Table& t, const Row& row, const nl2sql::Condition& c) {
  const Cell& cell = row[static_cast<std::size_t>(c.column)];
  if (t.columns[static_cast<std::size_t>(c.column)].dtype == DType::Real) {
    const double x = std::get<double>(cell);
    const double y = to_double(c.value);
    if (c.op == CondOp::Gt) return x > y;
    if (c.op == CondOp::Lt) return x < y;
    if (c.op == CondOp::Eq) return x == y;
    return x != y;
  }
  const bool eq = nl2sql::nfc(std::get<std::string>(cell)) == nl2sql::nfc(c.value);
  return c.op == CondOp::Eq ? eq : !eq;
}

inline std::vector<Row> run(const SqlQuery& q, const Table& t) {
  std::vector<const Row*> hits;
  for (const Row& row : t.rows) {
    std::size_t true_count = 0;
    for (const auto& c : q.conditions) true_count += cond_holds(t, row, c) ? 1 : 0;
    bool keep;
    if (q.conditions.empty()) {
      keep = true;
    } else if (q.connector == Connector::Or) {
      keep = true_count > 0;
    } else {
      keep = true_count == q.conditions.size();
    }
    if (keep) hits.push_back(&row);
  }

  bool has_agg = false;
  bool has_bare = false;
  for (const auto& s : q.select) (s.agg == Agg::None ? has_bare : has_agg) = true;

  std::vector<Row> out;
  if (!has_agg) {
    for (const Row* row : hits) {
      Row r;
      for (const auto& s : q.select) r.push_back((*row)[static_cast<std::size_t>(s.column)]);
      out.push_back(r);
    }
    return out;
  }

  Row reduced(q.select.size());
  for (std::size_t i = 0; i < q.select.size(); ++i) {
    const auto& s = q.select[i];
    if (s.agg == Agg::None) continue;
    if (s.agg == Agg::Count) {
      reduced[i] = static_cast<double>(hits.size());
      continue;
    }
    if (hits.empty()) return {};
    std::vector<double> xs;
    for (const Row* row : hits) xs.push_back(std::get<double>((*row)[static_cast<std::size_t>(s.column)]));
    double v = 0.0;
    if (s.agg == Agg::Max) {
      v = *std::max_element(xs.begin(), xs.end());
    } else if (s.agg == Agg::Min) {
      v = *std::min_element(xs.begin(), xs.end());
    } else {
      for (double x : xs) v += x;
      if (s.agg == Agg::Avg) v /= static_cast<double>(xs.size());
    }
    reduced[i] = v;
  }
  if (!has_bare) return {reduced};
  for (const Row* row : hits) {
    Row r = reduced;
    for (std::size_t i = 0; i < q.select.size(); ++i) {
      if (q.select[i].agg == Agg::None) r[i] = (*row)[static_cast<std::size_t>(q.select[i].column)];
    }
    out.push_back(r);
  }
  return out;
}

inline bool cell_close(const Cell& a, const Cell& b) {
  if (a.index() != b.index()) return false;
  if (a.index() == 1) return std::fabs(std::get<double>(a) - std::get<double>(b)) <= 1e-9;
  return nl2sql::nfc(std::get<std::string>(a)) == nl2sql::nfc(std::get<std::string>(b));
}

// Multiset equality by exhaustive pairing.
inline bool same_rows(const std::vector<Row>& a, const std::vector<Row>& b) {
  if (a.size() != b.size()) return false;
  std::vector<bool> used(b.size(), false);
  for (const Row& x : a) {
    bool found = false;
    for (std::size_t j = 0; j < b.size() && !found; ++j) {
      if (used[j] || x.size() != b[j].size()) continue;
      bool eq = true;
      for (std::size_t k = 0; k < x.size() && eq; ++k) eq = cell_close(x[k], b[j][k]);
      if (eq) used[j] = found = true;
    }
    if (!found) return false;
  }
  return true;
}

// ---- random fixtures ---------------------------------------------------------

inline const std::vector<std::string>& words() {
  static const std::vector<std::string> w = {
      "Oslo", "Lima", "Kyiv", "Bern", "Nome", "Ames", "Zug", "Café", "Café", "007",
      "7",    "a b",  "Q1",   "Åse", "Åse"};
  return w;
}

inline Table random_table(std::mt19937_64& rng, const std::string& id, std::size_t max_rows = 50,
                          std::size_t max_cols = 8) {
  Table t;
  t.id = id;
  t.name = "random " + id;
  const std::size_t ncols = 1 + rng() % max_cols;
  const std::size_t nrows = rng() % (max_rows + 1);
  for (std::size_t c = 0; c < ncols; ++c) {
    t.columns.push_back({"c" + std::to_string(c), rng() % 2 ? DType::Real : DType::Text});
  }
  for (std::size_t r = 0; r < nrows; ++r) {
    Row row;
    for (const auto& col : t.columns) {
      if (col.dtype == DType::Real) {
        // Small integers force ties; halves and negatives exercise decimals.
        const int kind = static_cast<int>(rng() % 3);
        const double base = static_cast<double>(static_cast<int>(rng() % 21) - 10);
        row.emplace_back(kind == 0 ? base : kind == 1 ? base / 2.0 : base * 37.25);
      } else {
        row.emplace_back(words()[rng() % words().size()]);
      }
    }
    t.rows.push_back(row);
  }
  return t;
}

inline SqlQuery random_query(std::mt19937_64& rng, const Table& t) {
  SqlQuery q;
  const std::size_t ncols = t.column_count();
  const std::size_t nsel = 1 + rng() % 3;
  for (std::size_t i = 0; i < nsel; ++i) {
    const int col = static_cast<int>(rng() % ncols);
    Agg agg;
    if (t.columns[static_cast<std::size_t>(col)].dtype == DType::Text) {
      agg = rng() % 2 ? Agg::Count : Agg::None;
    } else {
      agg = static_cast<Agg>(rng() % nl2sql::kAggCount);
    }
    q.select.push_back({col, agg});
  }
  const std::size_t ncond = rng() % 4;
  for (std::size_t i = 0; i < ncond; ++i) {
    const int col = static_cast<int>(rng() % ncols);
    const auto& column = t.columns[static_cast<std::size_t>(col)];
    nl2sql::Condition c;
    c.column = col;
    const bool from_cell = !t.rows.empty() && rng() % 4 != 0;
    const auto& cell = from_cell ? t.rows[rng() % t.row_count()][static_cast<std::size_t>(col)] : Cell{};
    if (column.dtype == DType::Real) {
      c.op = static_cast<CondOp>(rng() % nl2sql::kCondOpCount);
      const double v = from_cell ? std::get<double>(cell) : static_cast<double>(rng() % 200) / 4.0 - 20.0;
      c.value = nl2sql::render_number(v);
      if (rng() % 5 == 0 && c.value.find('.') == std::string::npos) c.value += ".0";
    } else {
      c.op = rng() % 2 ? CondOp::Eq : CondOp::Neq;
      c.value = from_cell ? std::get<std::string>(cell) : words()[rng() % words().size()];
    }
    q.conditions.push_back(c);
  }
  if (q.conditions.size() > 1) q.connector = rng() % 2 ? Connector::And : Connector::Or;
  return q;
}

}  // namespace oracle
