#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace nl2sql {

enum class DType { Text, Real };

struct Column {
  std::string name;
  DType dtype = DType::Text;

  bool operator==(const Column&) const = default;
};

// A cell is either verbatim text or a finite real.
using Cell = std::variant<std::string, double>;

std::string cell_to_string(const Cell& cell);

struct Table {
  std::string id;
  std::string name;
  std::vector<Column> columns;
  std::vector<std::vector<Cell>> rows;

  std::size_t column_count() const { return columns.size(); }
  std::size_t row_count() const { return rows.size(); }

  bool operator==(const Table&) const = default;
};

// Throws ValidationError naming the table id, row index and column.
void validate_table(const Table& table);

class TableSet {
 public:
  TableSet() = default;

  // Throws ValidationError on a duplicate id.
  void add(Table table);

  // Throws BoundsError when the id is unknown.
  const Table& at(const std::string& id) const;
  bool contains(const std::string& id) const { return tables_.count(id) != 0; }
  std::size_t size() const { return tables_.size(); }

  const std::map<std::string, Table>& tables() const { return tables_; }

  bool operator==(const TableSet&) const = default;

 private:
  std::map<std::string, Table> tables_;
};

// JSONL form: {"id","name","header","types","rows"}.
nlohmann::json table_to_json(const Table& table);
Table table_from_json(const nlohmann::json& j);

TableSet load_tables(const std::filesystem::path& path);
TableSet parse_tables(std::istream& in);

// Canonical serialization: tables in id order, one compact JSON object per line.
void save_tables(const TableSet& tables, const std::filesystem::path& path);
std::string serialize_tables(const TableSet& tables);

std::vector<Cell> column_values(const Table& table, std::size_t col_index);

}  // namespace nl2sql
