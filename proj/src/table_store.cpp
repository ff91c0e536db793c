#include "nl2sql/table_store.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "nl2sql/errors.hpp"
#include "nl2sql/numeric.hpp"

namespace nl2sql {

using nlohmann::json;

std::string cell_to_string(const Cell& cell) {
  if (const auto* s = std::get_if<std::string>(&cell)) return *s;
  return render_number(std::get<double>(cell));
}

void validate_table(const Table& table) {
  if (table.id.empty()) throw ValidationError("table with empty id");
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (table.columns[c].name.empty()) {
      throw ValidationError("table " + table.id + ": column " +
                            std::to_string(c) + " has an empty name");
    }
  }
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (row.size() != table.columns.size()) {
      throw ValidationError("table " + table.id + ": row " + std::to_string(r) +
                            " has " + std::to_string(row.size()) +
                            " cells, header has " +
                            std::to_string(table.columns.size()));
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
      bool real_col = table.columns[c].dtype == DType::Real;
      bool real_cell = std::holds_alternative<double>(row[c]);
      if (real_col != real_cell) {
        throw ValidationError("table " + table.id + ": row " +
                              std::to_string(r) + " column '" +
                              table.columns[c].name + "' has a cell of the wrong type");
      }
      if (real_cell && !std::isfinite(std::get<double>(row[c]))) {
        throw ValidationError("table " + table.id + ": row " +
                              std::to_string(r) + " column '" +
                              table.columns[c].name + "' is not finite");
      }
    }
  }
}

void TableSet::add(Table table) {
  if (tables_.count(table.id) != 0) {
    throw ValidationError("duplicate table id " + table.id);
  }
  std::string id = table.id;
  tables_.emplace(std::move(id), std::move(table));
}

const Table& TableSet::at(const std::string& id) const {
  auto it = tables_.find(id);
  if (it == tables_.end()) throw BoundsError("unknown table id " + id);
  return it->second;
}

json table_to_json(const Table& table) {
  json header = json::array();
  json types = json::array();
  for (const auto& col : table.columns) {
    header.push_back(col.name);
    types.push_back(col.dtype == DType::Real ? "real" : "text");
  }
  json rows = json::array();
  for (const auto& row : table.rows) {
    json out = json::array();
    for (const auto& cell : row) {
      if (const auto* s = std::get_if<std::string>(&cell)) {
        out.push_back(*s);
      } else {
        out.push_back(number_to_json(std::get<double>(cell)));
      }
    }
    rows.push_back(std::move(out));
  }
  return json{{"id", table.id},
              {"name", table.name},
              {"header", std::move(header)},
              {"types", std::move(types)},
              {"rows", std::move(rows)}};
}

Table table_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("table entry is not a JSON object");
  for (const char* key : {"id", "header", "types", "rows"}) {
    if (!j.contains(key)) throw ParseError(std::string("table missing field '") + key + "'");
  }
  Table t;
  t.id = j.at("id").get<std::string>();
  t.name = j.value("name", std::string());
  const auto& header = j.at("header");
  const auto& types = j.at("types");
  if (!header.is_array() || !types.is_array() || header.size() != types.size()) {
    throw ValidationError("table " + t.id + ": header and types differ in length");
  }
  for (std::size_t c = 0; c < header.size(); ++c) {
    std::string type = types[c].get<std::string>();
    DType dtype;
    if (type == "text") {
      dtype = DType::Text;
    } else if (type == "real") {
      dtype = DType::Real;
    } else {
      throw ValidationError("table " + t.id + ": unknown column type '" + type + "'");
    }
    t.columns.push_back({header[c].get<std::string>(), dtype});
  }
  const auto& rows = j.at("rows");
  if (!rows.is_array()) throw ParseError("table " + t.id + ": rows is not an array");
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (!row.is_array() || row.size() != t.columns.size()) {
      throw ValidationError("table " + t.id + ": row " + std::to_string(r) +
                            " does not match the " +
                            std::to_string(t.columns.size()) + "-column header");
    }
    std::vector<Cell> cells;
    cells.reserve(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) {
      const auto& v = row[c];
      if (t.columns[c].dtype == DType::Real) {
        std::optional<double> num;
        if (v.is_number()) {
          num = v.get<double>();
          if (!std::isfinite(*num)) num.reset();
        } else if (v.is_string()) {
          num = parse_number(v.get<std::string>());
        }
        if (!num) {
          throw ValidationError("table " + t.id + ": row " + std::to_string(r) +
                                " column '" + t.columns[c].name +
                                "' is not a finite number: " + v.dump());
        }
        cells.emplace_back(*num);
      } else if (v.is_string()) {
        cells.emplace_back(v.get<std::string>());
      } else if (v.is_number()) {
        cells.emplace_back(v.dump());
      } else {
        throw ValidationError("table " + t.id + ": row " + std::to_string(r) +
                              " column '" + t.columns[c].name + "' is not text");
      }
    }
    t.rows.push_back(std::move(cells));
  }
  validate_table(t);
  return t;
}

TableSet parse_tables(std::istream& in) {
  TableSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      set.add(table_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return set;
}

TableSet load_tables(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return parse_tables(in);
}

std::string serialize_tables(const TableSet& tables) {
  std::string out;
  for (const auto& [id, table] : tables.tables()) {
    out += table_to_json(table).dump();
    out += '\n';
  }
  return out;
}

void save_tables(const TableSet& tables, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << serialize_tables(tables);
}

std::vector<Cell> column_values(const Table& table, std::size_t col_index) {
  if (col_index >= table.column_count()) {
    throw BoundsError("column index " + std::to_string(col_index) +
                      " out of range for table " + table.id + " with " +
                      std::to_string(table.column_count()) + " columns");
  }
  std::vector<Cell> out;
  out.reserve(table.row_count());
  for (const auto& row : table.rows) out.push_back(row[col_index]);
  return out;
}

}  // namespace nl2sql
