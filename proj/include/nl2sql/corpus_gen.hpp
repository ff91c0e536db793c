#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "nl2sql/sql_ast.hpp"
#include "nl2sql/table_store.hpp"

namespace nl2sql {

using Rng = std::mt19937_64;

enum class LinkCategory { None, Abbreviation, Alias, NumberFormat, Adaptation, UnitMismatch, Other };
enum class Split { Train, Valid, Test };

std::string_view category_name(LinkCategory c);
LinkCategory category_from_name(std::string_view name);
std::string_view split_name(Split s);
Split split_from_name(std::string_view name);

struct Example {
  std::string table_id;
  std::string question;
  std::vector<std::string> tokens;
  GoldLabel gold = Rejection{};
  LinkCategory category = LinkCategory::None;
  Split split = Split::Train;

  bool answerable() const { return !is_rejection(gold); }
  const SqlQuery& sql() const { return std::get<SqlQuery>(gold); }
};

nlohmann::json example_to_json(const Example& ex);
Example example_from_json(const nlohmann::json& j);

struct GenConfig {
  std::uint64_t seed = 1;
  int n_tables = 600;
  int n_questions_per_table = 10;
  // 5,500 unanswerable out of 64,891 questions.
  double unanswerable_rate = 5500.0 / 64891.0;
  double entity_link_rate = 0.30;
  std::map<LinkCategory, double> category_weights = {
      {LinkCategory::Abbreviation, 0.201}, {LinkCategory::Alias, 0.141},
      {LinkCategory::NumberFormat, 0.257}, {LinkCategory::Adaptation, 0.325},
      {LinkCategory::Other, 0.076}};
  double mean_conditions = 1.6;
  double mean_selects = 1.1;
  // 51.7K / 6.4K / 6.7K.
  std::array<double, 3> split_fractions = {51.7 / 64.8, 6.4 / 64.8, 6.7 / 64.8};
  // Probability that a TEXT condition is phrased without its column name.
  double schema_omission_rate = 0.3;
};

// Throws ConfigError on rates outside [0,1], fractions or weights that do not
// sum to 1, or non-positive sizes.
void validate_config(const GenConfig& cfg);
nlohmann::json config_to_json(const GenConfig& cfg);
// Missing keys keep their defaults.
GenConfig config_from_json(const nlohmann::json& j);

struct LexiconEntry {
  std::string table_id;
  std::string surface;
  std::string canonical;
  LinkCategory category = LinkCategory::None;

  auto operator<=>(const LexiconEntry&) const = default;
};

class Lexicon {
 public:
  void add(LexiconEntry entry);
  // Surface forms recorded for (table, canonical value), in insertion order.
  std::vector<std::string> surfaces(const std::string& table_id,
                                    const std::string& canonical) const;
  const std::vector<LexiconEntry>& entries() const { return entries_; }

 private:
  std::vector<LexiconEntry> entries_;
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> by_value_;
};

struct Corpus {
  TableSet tables;
  std::vector<Example> examples;
  Lexicon lexicon;
  nlohmann::json stats;

  std::vector<const Example*> split(Split s) const;
};

// ---- generator operations ---------------------------------------------------

Table sample_table(Rng& rng, const GenConfig& cfg, const std::string& id = "t0");
SqlQuery sample_query(const Table& t, Rng& rng, const GenConfig& cfg);

struct Realization {
  std::string question;
  std::vector<std::string> tokens;
  // Token span [begin, end) of each condition value mention, parallel to
  // the query's conditions.
  std::vector<std::pair<std::size_t, std::size_t>> value_spans;
  std::vector<bool> column_omitted;
};

Realization realize_question(const SqlQuery& q, const Table& t, Rng& rng,
                             const GenConfig& cfg = {});

struct Draft {
  Example example;
  Realization realization;
};

// Rewrites one condition value mention into a category-specific variant and
// records it in the lexicon. Throws InapplicableError when no condition of
// the query admits the category.
Draft perturb(const Draft& draft, const Table& t, LinkCategory category, Rng& rng,
              Lexicon& lexicon);

Example make_unanswerable(const Table& t, Rng& rng, const GenConfig& cfg = {});

Corpus build_corpus(const GenConfig& cfg);

// Directory layout: tables.jsonl, examples.jsonl, lexicon.jsonl, stats.json.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// Token spans of every gold condition value: the verbatim value when present,
// otherwise any lexicon surface recorded for it. Missing mentions are npos.
std::vector<std::pair<std::size_t, std::size_t>> locate_value_spans(
    const Example& ex, const Lexicon& lexicon);

}  // namespace nl2sql
