#include "nl2sql/corpus_gen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "nl2sql/errors.hpp"
#include "nl2sql/numeric.hpp"
#include "nl2sql/sql_exec.hpp"
#include "nl2sql/text.hpp"

namespace nl2sql {

using nlohmann::json;

// ---- names and codes ---------------------------------------------------------

namespace {

constexpr std::array<std::pair<LinkCategory, std::string_view>, 7> kCategoryNames = {{
    {LinkCategory::None, "none"},
    {LinkCategory::Abbreviation, "abbreviation"},
    {LinkCategory::Alias, "alias"},
    {LinkCategory::NumberFormat, "number_format"},
    {LinkCategory::Adaptation, "adaptation"},
    {LinkCategory::UnitMismatch, "unit_mismatch"},
    {LinkCategory::Other, "other"},
}};

}  // namespace

std::string_view category_name(LinkCategory c) {
  for (const auto& [cat, name] : kCategoryNames) {
    if (cat == c) return name;
  }
  return "none";
}

LinkCategory category_from_name(std::string_view name) {
  for (const auto& [cat, n] : kCategoryNames) {
    if (n == name) return cat;
  }
  throw ParseError("unknown linking category '" + std::string(name) + "'");
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_name(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "valid") return Split::Valid;
  if (name == "test") return Split::Test;
  throw ParseError("unknown split '" + std::string(name) + "'");
}

json example_to_json(const Example& ex) {
  return json{{"table_id", ex.table_id},
              {"question", ex.question},
              {"answerable", ex.answerable()},
              {"sql", ex.answerable() ? sql_to_json(ex.sql()) : json(nullptr)},
              {"category", category_name(ex.category)},
              {"split", split_name(ex.split)}};
}

Example example_from_json(const json& j) {
  try {
    Example ex;
    ex.table_id = j.at("table_id").get<std::string>();
    ex.question = j.at("question").get<std::string>();
    ex.tokens = tokenize(ex.question);
    const bool answerable = j.at("answerable").get<bool>();
    const auto& sql = j.at("sql");
    if (answerable != !sql.is_null()) {
      throw ParseError("example: answerable flag disagrees with sql field");
    }
    if (answerable) {
      ex.gold = sql_from_json(sql);
    } else {
      ex.gold = Rejection{};
    }
    ex.category = category_from_name(j.value("category", std::string("none")));
    ex.split = split_from_name(j.value("split", std::string("train")));
    return ex;
  } catch (const json::exception& e) {
    throw ParseError(std::string("example: ") + e.what());
  }
}

// ---- config ------------------------------------------------------------------

void validate_config(const GenConfig& cfg) {
  auto rate = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError(std::string(name) + " must lie in [0, 1]");
    }
  };
  rate(cfg.unanswerable_rate, "unanswerable_rate");
  rate(cfg.entity_link_rate, "entity_link_rate");
  rate(cfg.schema_omission_rate, "schema_omission_rate");
  if (cfg.unanswerable_rate + cfg.entity_link_rate > 1.0 + 1e-12) {
    throw ConfigError("unanswerable_rate + entity_link_rate exceeds 1");
  }
  if (cfg.n_tables <= 0 || cfg.n_questions_per_table <= 0) {
    throw ConfigError("n_tables and n_questions_per_table must be positive");
  }
  double fsum = 0.0;
  for (double f : cfg.split_fractions) {
    rate(f, "split_fractions entry");
    fsum += f;
  }
  if (std::fabs(fsum - 1.0) > 1e-6) throw ConfigError("split_fractions must sum to 1");
  double wsum = 0.0;
  for (const auto& [cat, w] : cfg.category_weights) {
    if (cat == LinkCategory::None) throw ConfigError("category_weights cannot weight 'none'");
    rate(w, "category weight");
    wsum += w;
  }
  if (std::fabs(wsum - 1.0) > 1e-6) throw ConfigError("category_weights must sum to 1");
  if (!(cfg.mean_conditions >= 1.0 && cfg.mean_conditions <= 4.0)) {
    throw ConfigError("mean_conditions must lie in [1, 4]");
  }
  if (!(cfg.mean_selects >= 1.0 && cfg.mean_selects <= 3.0)) {
    throw ConfigError("mean_selects must lie in [1, 3]");
  }
}

json config_to_json(const GenConfig& cfg) {
  json weights = json::object();
  for (const auto& [cat, w] : cfg.category_weights) weights[std::string(category_name(cat))] = w;
  return json{{"seed", cfg.seed},
              {"n_tables", cfg.n_tables},
              {"n_questions_per_table", cfg.n_questions_per_table},
              {"unanswerable_rate", cfg.unanswerable_rate},
              {"entity_link_rate", cfg.entity_link_rate},
              {"category_weights", weights},
              {"mean_conditions", cfg.mean_conditions},
              {"mean_selects", cfg.mean_selects},
              {"split_fractions", cfg.split_fractions},
              {"schema_omission_rate", cfg.schema_omission_rate}};
}

GenConfig config_from_json(const json& j) {
  GenConfig cfg;
  try {
    if (!j.is_object()) throw ConfigError("generator config must be a JSON object");
    cfg.seed = j.value("seed", cfg.seed);
    cfg.n_tables = j.value("n_tables", cfg.n_tables);
    cfg.n_questions_per_table = j.value("n_questions_per_table", cfg.n_questions_per_table);
    cfg.unanswerable_rate = j.value("unanswerable_rate", cfg.unanswerable_rate);
    cfg.entity_link_rate = j.value("entity_link_rate", cfg.entity_link_rate);
    cfg.mean_conditions = j.value("mean_conditions", cfg.mean_conditions);
    cfg.mean_selects = j.value("mean_selects", cfg.mean_selects);
    cfg.schema_omission_rate = j.value("schema_omission_rate", cfg.schema_omission_rate);
    if (j.contains("split_fractions")) {
      const auto& f = j.at("split_fractions");
      if (!f.is_array() || f.size() != 3) throw ConfigError("split_fractions needs 3 entries");
      for (std::size_t i = 0; i < 3; ++i) cfg.split_fractions[i] = f[i].get<double>();
    }
    if (j.contains("category_weights")) {
      cfg.category_weights.clear();
      for (const auto& [name, w] : j.at("category_weights").items()) {
        cfg.category_weights[category_from_name(name)] = w.get<double>();
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

// ---- lexicon -----------------------------------------------------------------

void Lexicon::add(LexiconEntry entry) {
  auto key = std::make_pair(entry.table_id, entry.canonical);
  for (std::size_t idx : by_value_[key]) {
    if (entries_[idx].surface == entry.surface) return;
  }
  by_value_[key].push_back(entries_.size());
  entries_.push_back(std::move(entry));
}

std::vector<std::string> Lexicon::surfaces(const std::string& table_id,
                                           const std::string& canonical) const {
  std::vector<std::string> out;
  auto it = by_value_.find({table_id, canonical});
  if (it == by_value_.end()) return out;
  for (std::size_t idx : it->second) out.push_back(entries_[idx].surface);
  return out;
}

std::vector<const Example*> Corpus::split(Split s) const {
  std::vector<const Example*> out;
  for (const auto& ex : examples) {
    if (ex.split == s) out.push_back(&ex);
  }
  return out;
}

// ---- random helpers ----------------------------------------------------------

namespace {

double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
std::size_t below(Rng& rng, std::size_t n) { return n == 0 ? 0 : rng() % n; }
bool coin(Rng& rng, double p) { return unit(rng) < p; }
int binomial(Rng& rng, int n, double p) {
  int k = 0;
  for (int i = 0; i < n; ++i) k += coin(rng, p) ? 1 : 0;
  return k;
}
template <class T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[below(rng, v.size())];
}
template <class T>
void shuffle(Rng& rng, std::vector<T>& v) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(rng, i)]);
}

// ---- the fixed "world": entity inventories and topic vocabularies -----------

enum class ValueKind { LargeInt, SmallInt, Decimal };

struct RealAttr {
  std::string header;
  std::string unit;
  ValueKind kind;
  double scale;  // 10000 for columns stored in ten-thousands
};

struct Topic {
  std::string name;
  std::vector<RealAttr> attrs;
};

struct Entity {
  std::string canonical;
  std::string alias;
};

struct TextType {
  std::vector<std::string> headers;
  std::vector<Entity> entities;
};

struct World {
  std::vector<Topic> topics;
  std::vector<TextType> text_types;
  std::map<std::string, std::string> alias_of;
};

class NameMaker {
 public:
  explicit NameMaker(Rng& rng) : rng_(rng) {}

  std::string make(int syllables) {
    static const std::string consonants = "bdfgklmnprstvz";
    static const std::string vowels = "aeiou";
    static const std::string finals = "nrls";
    for (;;) {
      std::string s;
      for (int i = 0; i < syllables; ++i) {
        s += consonants[below(rng_, consonants.size())];
        s += vowels[below(rng_, vowels.size())];
        if (i + 1 == syllables && coin(rng_, 0.4)) s += finals[below(rng_, finals.size())];
      }
      s[0] = static_cast<char>(s[0] - 'a' + 'A');
      if (used_.insert(s).second) return s;
    }
  }

  void reserve(const std::string& s) { used_.insert(s); }

 private:
  Rng& rng_;
  std::set<std::string> used_;
};

World build_world() {
  World w;
  using K = ValueKind;
  w.topics = {
      {"housing market",
       {{"price", "yuan", K::LargeInt, 1}, {"area", "square meters", K::SmallInt, 1},
        {"rent", "yuan", K::LargeInt, 1}, {"units", "units", K::SmallInt, 1},
        {"floors", "floors", K::SmallInt, 1}, {"vacancy", "percent", K::Decimal, 1},
        {"tax", "yuan", K::LargeInt, 1}, {"deposit", "yuan", K::LargeInt, 1},
        {"trade volume 10k", "square meters", K::SmallInt, 10000},
        {"commission", "percent", K::Decimal, 1}, {"listings", "listings", K::LargeInt, 1},
        {"age", "years", K::SmallInt, 1}}},
      {"retail sales",
       {{"revenue", "yuan", K::LargeInt, 1}, {"profit", "yuan", K::LargeInt, 1},
        {"orders", "orders", K::LargeInt, 1}, {"stores", "stores", K::SmallInt, 1},
        {"staff", "people", K::SmallInt, 1}, {"discount", "percent", K::Decimal, 1},
        {"returns", "items", K::LargeInt, 1}, {"stock", "items", K::LargeInt, 1},
        {"visitors", "people", K::LargeInt, 1}, {"margin", "percent", K::Decimal, 1},
        {"sales 10k", "yuan", K::SmallInt, 10000}, {"rent", "yuan", K::LargeInt, 1}}},
      {"stock report",
       {{"share price", "yuan", K::Decimal, 1}, {"market value", "yuan", K::LargeInt, 1},
        {"earnings", "yuan", K::LargeInt, 1}, {"dividend", "yuan", K::Decimal, 1},
        {"turnover", "percent", K::Decimal, 1}, {"volume", "shares", K::LargeInt, 1},
        {"roe", "percent", K::Decimal, 1}, {"pe ratio", "times", K::Decimal, 1},
        {"net profit", "yuan", K::LargeInt, 1}, {"assets", "yuan", K::LargeInt, 1},
        {"employees", "people", K::LargeInt, 1}, {"debt 10k", "yuan", K::SmallInt, 10000}}},
      {"education",
       {{"students", "people", K::LargeInt, 1}, {"teachers", "people", K::SmallInt, 1},
        {"tuition", "yuan", K::LargeInt, 1}, {"budget", "yuan", K::LargeInt, 1},
        {"score", "points", K::Decimal, 1}, {"classes", "classes", K::SmallInt, 1},
        {"graduates", "people", K::LargeInt, 1}, {"courses", "courses", K::SmallInt, 1},
        {"ranking", "places", K::SmallInt, 1}, {"funding", "yuan", K::LargeInt, 1},
        {"labs", "labs", K::SmallInt, 1}, {"grants 10k", "yuan", K::SmallInt, 10000}}},
      {"tourism",
       {{"visitors", "people", K::LargeInt, 1}, {"hotels", "hotels", K::SmallInt, 1},
        {"ticket price", "yuan", K::Decimal, 1}, {"revenue", "yuan", K::LargeInt, 1},
        {"tours", "tours", K::SmallInt, 1}, {"flights", "flights", K::LargeInt, 1},
        {"beds", "beds", K::LargeInt, 1}, {"occupancy", "percent", K::Decimal, 1},
        {"guides", "people", K::SmallInt, 1}, {"spending", "yuan", K::LargeInt, 1},
        {"nights", "nights", K::Decimal, 1}, {"arrivals 10k", "people", K::SmallInt, 10000}}},
      {"logistics",
       {{"shipments", "shipments", K::LargeInt, 1}, {"trucks", "trucks", K::SmallInt, 1},
        {"weight", "tons", K::Decimal, 1}, {"distance", "kilometers", K::LargeInt, 1},
        {"cost", "yuan", K::LargeInt, 1}, {"delay", "hours", K::Decimal, 1},
        {"routes", "routes", K::SmallInt, 1}, {"drivers", "people", K::SmallInt, 1},
        {"fuel", "liters", K::LargeInt, 1}, {"capacity", "tons", K::LargeInt, 1},
        {"depots", "depots", K::SmallInt, 1}, {"cargo 10k", "tons", K::SmallInt, 10000}}},
      {"healthcare",
       {{"beds", "beds", K::LargeInt, 1}, {"doctors", "people", K::SmallInt, 1},
        {"nurses", "people", K::LargeInt, 1}, {"patients", "people", K::LargeInt, 1},
        {"visits", "visits", K::LargeInt, 1}, {"cost", "yuan", K::LargeInt, 1},
        {"budget", "yuan", K::LargeInt, 1}, {"wait time", "minutes", K::Decimal, 1},
        {"surgeries", "surgeries", K::LargeInt, 1}, {"wards", "wards", K::SmallInt, 1},
        {"ambulances", "vehicles", K::SmallInt, 1}, {"claims 10k", "yuan", K::SmallInt, 10000}}},
      {"agriculture",
       {{"yield", "tons", K::Decimal, 1}, {"acreage", "acres", K::LargeInt, 1},
        {"harvest", "tons", K::LargeInt, 1}, {"price", "yuan", K::Decimal, 1},
        {"farms", "farms", K::SmallInt, 1}, {"workers", "people", K::LargeInt, 1},
        {"rainfall", "millimeters", K::Decimal, 1}, {"exports", "tons", K::LargeInt, 1},
        {"output", "yuan", K::LargeInt, 1}, {"subsidy", "yuan", K::LargeInt, 1},
        {"tractors", "vehicles", K::SmallInt, 1}, {"land 10k", "acres", K::SmallInt, 10000}}},
  };

  Rng rng(0x7AB1E5EEDull);
  NameMaker names(rng);
  auto make_entities = [&](int n, auto&& canonical_fn) {
    std::vector<Entity> out;
    for (int i = 0; i < n; ++i) {
      Entity e;
      e.canonical = canonical_fn();
      e.alias = names.make(2 + static_cast<int>(below(rng, 2)));
      out.push_back(std::move(e));
    }
    return out;
  };

  TextType city{{"city", "town"}, {}};
  city.entities = make_entities(48, [&] { return names.make(2 + static_cast<int>(below(rng, 2))); });
  TextType company{{"company", "firm"}, {}};
  const std::vector<std::string> company_suffix = {"Group", "Holdings", "Corp", "Tech", "Capital", "Energy"};
  company.entities = make_entities(48, [&] { return names.make(2) + " " + pick(rng, company_suffix); });
  TextType person{{"manager", "owner", "contact"}, {}};
  person.entities = make_entities(48, [&] { return names.make(2) + " " + names.make(2); });
  TextType product{{"product", "brand"}, {}};
  const std::vector<std::string> product_suffix = {"Pro", "Max", "Lite", "Plus", "Mini", "Air"};
  product.entities = make_entities(36, [&] { return names.make(2) + " " + pick(rng, product_suffix); });
  TextType region{{"region", "district"}, {}};
  const std::vector<std::string> region_prefix = {"North", "South", "East", "West", "Upper", "Lower"};
  region.entities = make_entities(30, [&] { return pick(rng, region_prefix) + " " + names.make(2); });
  TextType status{{"status", "grade"}, {}};
  const std::vector<std::pair<std::string, std::string>> statuses = {
      {"qualified", "passed"},   {"excellent", "outstanding"}, {"pending", "waiting"},
      {"reliable", "trusted"},   {"premium", "luxury"},        {"standard", "regular"},
      {"basic", "simple"},       {"certified", "approved"},    {"active", "running"},
      {"closed", "shut"},        {"suspended", "paused"},      {"expired", "lapsed"}};
  for (const auto& [canon, alias] : statuses) status.entities.push_back({canon, alias});

  w.text_types = {city, company, person, product, region, status};
  for (const auto& tt : w.text_types) {
    for (const auto& e : tt.entities) w.alias_of[e.canonical] = e.alias;
  }
  return w;
}

const World& world() {
  static const World w = build_world();
  return w;
}

std::set<std::string> header_tokens(const Table& t) {
  std::set<std::string> out;
  for (const auto& c : t.columns) {
    for (auto& tok : tokenize(c.name)) out.insert(tok);
  }
  return out;
}

// Tables remember their topic through the name ("<topic> 17").
const Topic& topic_of(const Table& t) {
  for (const auto& topic : world().topics) {
    if (t.name.rfind(topic.name, 0) == 0) return topic;
  }
  return world().topics.front();
}

const RealAttr* attr_of(const Table& t, std::size_t col) {
  for (const auto& a : topic_of(t).attrs) {
    if (a.header == t.columns[col].name) return &a;
  }
  return nullptr;
}

double sample_real(Rng& rng, ValueKind kind) {
  switch (kind) {
    case ValueKind::LargeInt:
      if (coin(rng, 0.5)) return static_cast<double>(1 + below(rng, 500)) * 1000.0;
      return static_cast<double>(10 + below(rng, 4990)) * 100.0;
    case ValueKind::SmallInt:
      return static_cast<double>(1 + below(rng, 300));
    case ValueKind::Decimal:
      return static_cast<double>(5 + below(rng, 995)) / 10.0;
  }
  return 0.0;
}

}  // namespace

// ---- sample_table --------------------------------------------------------------

Table sample_table(Rng& rng, const GenConfig& cfg, const std::string& id) {
  (void)cfg;
  const World& w = world();
  const Topic& topic = pick(rng, w.topics);
  Table t;
  t.id = id;
  t.name = topic.name + " " + std::to_string(1 + below(rng, 99));

  // 4 + Binomial(8, 0.4) columns: mean 7.2.
  const int ncols = 4 + binomial(rng, 8, 0.4);
  const int ntext = 1 + binomial(rng, 2, 0.4);
  const int nreal = ncols - ntext;

  std::vector<std::size_t> type_ids(w.text_types.size());
  for (std::size_t i = 0; i < type_ids.size(); ++i) type_ids[i] = i;
  shuffle(rng, type_ids);
  type_ids.resize(static_cast<std::size_t>(ntext));

  // One LargeInt attribute first so every table admits number re-formatting.
  std::vector<std::size_t> large, rest;
  for (std::size_t i = 0; i < topic.attrs.size(); ++i) {
    (topic.attrs[i].kind == ValueKind::LargeInt && topic.attrs[i].scale == 1 ? large : rest)
        .push_back(i);
  }
  shuffle(rng, large);
  std::vector<std::size_t> attr_ids = {large.front()};
  for (std::size_t i = 1; i < large.size(); ++i) rest.push_back(large[i]);
  shuffle(rng, rest);
  for (std::size_t i = 0; attr_ids.size() < static_cast<std::size_t>(nreal) && i < rest.size(); ++i) {
    attr_ids.push_back(rest[i]);
  }

  struct Spec {
    bool text;
    std::size_t idx;
    std::string header;
  };
  std::vector<Spec> specs;
  for (std::size_t ti : type_ids) specs.push_back({true, ti, pick(rng, w.text_types[ti].headers)});
  for (std::size_t ai : attr_ids) specs.push_back({false, ai, topic.attrs[ai].header});
  shuffle(rng, specs);

  for (const auto& s : specs) t.columns.push_back({s.header, s.text ? DType::Text : DType::Real});

  const int nrows = 20 + static_cast<int>(below(rng, 44));  // mean 41.5
  for (int r = 0; r < nrows; ++r) {
    std::vector<Cell> row;
    for (const auto& s : specs) {
      if (s.text) {
        row.emplace_back(pick(rng, w.text_types[s.idx].entities).canonical);
      } else {
        row.emplace_back(sample_real(rng, topic.attrs[s.idx].kind));
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---- sample_query --------------------------------------------------------------

SqlQuery sample_query(const Table& t, Rng& rng, const GenConfig& cfg) {
  if (t.row_count() == 0 || t.column_count() < 2) {
    throw ContractViolation("sample_query needs a nonempty table with two or more columns");
  }
  const std::size_t ncols = t.column_count();
  const std::size_t witness = below(rng, t.row_count());

  int n_cond = 1 + binomial(rng, 3, (cfg.mean_conditions - 1.0) / 3.0);
  int n_sel = 1 + binomial(rng, 2, (cfg.mean_selects - 1.0) / 2.0);
  n_cond = std::min<int>(n_cond, static_cast<int>(ncols) - 1);
  n_sel = std::min<int>(n_sel, static_cast<int>(ncols) - n_cond);

  std::vector<std::size_t> cols(ncols);
  for (std::size_t i = 0; i < ncols; ++i) cols[i] = i;
  shuffle(rng, cols);

  SqlQuery q;
  for (int k = 0; k < n_cond; ++k) {
    const std::size_t c = cols[static_cast<std::size_t>(k)];
    const Cell& wv = t.rows[witness][c];
    Condition cond;
    cond.column = static_cast<int>(c);
    if (t.columns[c].dtype == DType::Text) {
      cond.op = CondOp::Eq;
      cond.value = std::get<std::string>(wv);
      if (coin(rng, 0.25)) {
        std::vector<std::string> others;
        for (const auto& row : t.rows) {
          const auto& s = std::get<std::string>(row[c]);
          if (s != cond.value) others.push_back(s);
        }
        if (!others.empty()) {
          cond.op = CondOp::Neq;
          cond.value = pick(rng, others);
        }
      }
    } else {
      const double x = std::get<double>(wv);
      std::vector<double> lower, upper, differ;
      for (const auto& row : t.rows) {
        const double v = std::get<double>(row[c]);
        if (v < x) lower.push_back(v);
        if (v > x) upper.push_back(v);
        if (v != x) differ.push_back(v);
      }
      const double u = unit(rng);
      cond.op = CondOp::Eq;
      double value = x;
      if (u < 0.35 && !lower.empty()) {
        cond.op = CondOp::Gt;
        value = pick(rng, lower);
      } else if (u >= 0.35 && u < 0.70 && !upper.empty()) {
        cond.op = CondOp::Lt;
        value = pick(rng, upper);
      } else if (u >= 0.90 && !differ.empty()) {
        cond.op = CondOp::Neq;
        value = pick(rng, differ);
      }
      cond.value = render_number(value);
    }
    q.conditions.push_back(std::move(cond));
  }
  if (q.conditions.size() > 1) q.connector = coin(rng, 0.7) ? Connector::And : Connector::Or;

  const bool aggregated = coin(rng, 0.55);
  for (int k = 0; k < n_sel; ++k) {
    const std::size_t c = cols[static_cast<std::size_t>(n_cond + k)];
    Agg agg = Agg::None;
    if (aggregated) {
      if (t.columns[c].dtype == DType::Text) {
        agg = Agg::Count;
      } else {
        static const std::vector<Agg> real_aggs = {Agg::Avg, Agg::Max, Agg::Min, Agg::Sum, Agg::Count};
        agg = pick(rng, real_aggs);
      }
    }
    q.select.push_back({static_cast<int>(c), agg});
  }
  return q;
}

// ---- realize_question ----------------------------------------------------------

namespace {

using Tokens = std::vector<std::string>;

void append(Tokens& out, const Tokens& more) { out.insert(out.end(), more.begin(), more.end()); }

Tokens select_phrase(const SelectItem& item, const Table& t, Rng& rng) {
  Tokens out = {"the"};
  static const std::map<Agg, std::vector<Tokens>> words = {
      {Agg::None, {{}}},
      {Agg::Avg, {{"average"}, {"mean"}}},
      {Agg::Max, {{"highest"}, {"maximum"}, {"largest"}}},
      {Agg::Min, {{"lowest"}, {"minimum"}, {"smallest"}}},
      {Agg::Sum, {{"total"}, {"sum", "of"}}},
      {Agg::Count, {{"number", "of"}, {"count", "of"}}},
  };
  append(out, pick(rng, words.at(item.agg)));
  append(out, tokenize(t.columns[item.column].name));
  return out;
}

struct CondPhrase {
  Tokens tokens;
  std::size_t value_offset;
  std::size_t value_len;
  bool omitted;
};

CondPhrase condition_phrase(const Condition& c, const Table& t, Rng& rng, double omit_rate) {
  const Tokens header = tokenize(t.columns[c.column].name);
  const Tokens value = tokenize(c.value);
  const bool text = t.columns[c.column].dtype == DType::Text;
  CondPhrase p{{}, 0, value.size(), false};
  if (text && coin(rng, omit_rate)) {
    p.omitted = true;
    static const std::vector<Tokens> eq = {{"for"}, {"of"}, {"in"}};
    static const std::vector<Tokens> neq = {{"excluding"}, {"except"}, {"other", "than"}};
    p.tokens = pick(rng, c.op == CondOp::Eq ? eq : neq);
  } else {
    static const std::map<CondOp, std::vector<Tokens>> text_ops = {
        {CondOp::Eq, {{"is"}, {"equals"}}},
        {CondOp::Neq, {{"is", "not"}, {"other", "than"}}},
    };
    static const std::map<CondOp, std::vector<Tokens>> real_ops = {
        {CondOp::Gt, {{"above"}, {"more", "than"}, {"greater", "than"}, {"over"}}},
        {CondOp::Lt, {{"below"}, {"less", "than"}, {"under"}, {"smaller", "than"}}},
        {CondOp::Eq, {{"equal", "to"}, {"of", "exactly"}, {"is"}}},
        {CondOp::Neq, {{"not", "equal", "to"}, {"is", "not"}}},
    };
    p.tokens = header;
    append(p.tokens, pick(rng, (text ? text_ops : real_ops).at(c.op)));
  }
  p.value_offset = p.tokens.size();
  append(p.tokens, value);
  return p;
}

}  // namespace

Realization realize_question(const SqlQuery& q, const Table& t, Rng& rng, const GenConfig& cfg) {
  Realization r;
  Tokens toks;
  const bool all_none = std::all_of(q.select.begin(), q.select.end(),
                                    [](const SelectItem& s) { return s.agg == Agg::None; });
  static const std::vector<Tokens> openers_none = {
      {"what", "is"}, {"show"}, {"list"}, {"tell", "me"}, {"give", "me"}};
  static const std::vector<Tokens> openers_agg = {
      {"what", "is"}, {"tell", "me"}, {"give", "me"}, {"find"}};
  append(toks, pick(rng, all_none ? openers_none : openers_agg));
  for (std::size_t i = 0; i < q.select.size(); ++i) {
    if (i > 0) toks.push_back("and");
    append(toks, select_phrase(q.select[i], t, rng));
  }
  static const std::vector<std::string> leads = {"where", "when", "with", "if"};
  bool lead_done = false;
  for (std::size_t i = 0; i < q.conditions.size(); ++i) {
    CondPhrase p = condition_phrase(q.conditions[i], t, rng, cfg.schema_omission_rate);
    if (i > 0) toks.push_back(q.connector == Connector::Or ? "or" : "and");
    if (!p.omitted && !lead_done) {
      toks.push_back(pick(rng, leads));
      lead_done = true;
    }
    const std::size_t base = toks.size();
    append(toks, p.tokens);
    r.value_spans.emplace_back(base + p.value_offset, base + p.value_offset + p.value_len);
    r.column_omitted.push_back(p.omitted);
  }
  toks.push_back("?");
  r.tokens = toks;
  r.question = join_tokens(toks);
  return r;
}

// ---- perturb -------------------------------------------------------------------

namespace {

bool is_vowel(char c) {
  c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

std::optional<std::string> abbreviate(const std::string& value) {
  const Tokens words = tokenize(value);
  std::string out;
  if (words.size() > 1) {
    for (const auto& w : words) {
      out += static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    }
  } else {
    out += value[0];
    for (std::size_t i = 1; i < value.size(); ++i) {
      if (!is_vowel(value[i]) && value[i] != out.back()) out += value[i];
    }
  }
  if (out.size() < 2 || out == value) return std::nullopt;
  return out;
}

std::vector<std::string> adaptations(const std::string& value) {
  std::vector<std::string> out;
  const Tokens words = tokenize(value);
  if (words.size() > 1) {
    static const std::set<std::string> prefixes = {"North", "South", "East", "West", "Upper", "Lower"};
    if (prefixes.count(words.front())) {
      out.push_back(join_tokens(words, 1, words.size()));
    } else {
      out.push_back(join_tokens(words, 0, words.size() - 1));
    }
    return out;
  }
  static const std::vector<std::pair<std::string, std::string>> suffixes = {
      {"ied", "y"}, {"ed", "ing"}, {"ing", "ed"}, {"ent", "ence"}, {"ive", "ion"}, {"ard", "ards"}};
  for (const auto& [from, to] : suffixes) {
    if (value.size() > from.size() + 2 &&
        value.compare(value.size() - from.size(), from.size(), from) == 0) {
      out.push_back(value.substr(0, value.size() - from.size()) + to);
    }
  }
  static const std::vector<std::pair<std::string, std::string>> confusions = {
      {"k", "c"}, {"c", "k"}, {"s", "z"}, {"z", "s"}, {"i", "y"}, {"f", "ph"},
      {"v", "w"}, {"o", "ou"}, {"e", "a"}, {"u", "oo"}, {"d", "t"}, {"g", "gh"}};
  for (const auto& [from, to] : confusions) {
    const std::size_t pos = value.find(from, 1);
    if (pos != std::string::npos) {
      out.push_back(value.substr(0, pos) + to + value.substr(pos + from.size()));
    }
  }
  return out;
}

std::optional<std::string> case_variant(const std::string& value) {
  std::string out = value;
  const bool has_upper = std::any_of(value.begin(), value.end(),
                                     [](unsigned char c) { return std::isupper(c) != 0; });
  if (has_upper) {
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  } else {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  if (out == value) return std::nullopt;
  return out;
}

std::vector<std::string> number_formats(double v) {
  std::vector<std::string> out;
  if (v != std::floor(v) || v < 1000 || v >= 1e12) return out;
  const auto n = static_cast<long long>(v);
  std::string digits = std::to_string(n);
  std::string grouped;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) grouped += ',';
    grouped += digits[i];
  }
  out.push_back(grouped);
  if (n % 100 == 0) out.push_back(render_number(v / 1000.0) + "K");
  if (n % 100000 == 0 && n >= 1000000) out.push_back(render_number(v / 1e6) + "M");
  return out;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

Draft perturb(const Draft& draft, const Table& t, LinkCategory category, Rng& rng,
              Lexicon& lexicon) {
  if (!draft.example.answerable()) throw InapplicableError("cannot perturb an unanswerable example");
  const SqlQuery& q = draft.example.sql();
  std::vector<std::size_t> order(q.conditions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(rng, order);

  for (std::size_t ci : order) {
    const Condition& cond = q.conditions[ci];
    const bool text = t.columns[cond.column].dtype == DType::Text;
    std::vector<std::string> variants;
    Tokens trailing;
    switch (category) {
      case LinkCategory::Abbreviation:
        if (text) {
          if (auto a = abbreviate(cond.value)) variants.push_back(*a);
        }
        break;
      case LinkCategory::Alias:
        if (text) {
          auto it = world().alias_of.find(cond.value);
          if (it != world().alias_of.end()) variants.push_back(it->second);
        }
        break;
      case LinkCategory::Adaptation:
        if (text) variants = adaptations(cond.value);
        break;
      case LinkCategory::Other:
        if (text) {
          if (auto v = case_variant(cond.value)) variants.push_back(*v);
        }
        break;
      case LinkCategory::NumberFormat:
        if (!text) {
          if (auto num = parse_number(cond.value)) variants = number_formats(*num);
        }
        break;
      case LinkCategory::UnitMismatch:
        if (!text) {
          const RealAttr* attr = attr_of(t, static_cast<std::size_t>(cond.column));
          auto num = parse_number(cond.value);
          if (attr && attr->scale != 1 && num) {
            for (auto& f : number_formats(*num * attr->scale)) variants.push_back(f);
            trailing = tokenize(attr->unit);
          }
        }
        break;
      case LinkCategory::None:
        throw InapplicableError("'none' is not a perturbation");
    }
    shuffle(rng, variants);
    for (const auto& variant : variants) {
      const auto [b, e] = draft.realization.value_spans[ci];
      Tokens toks(draft.realization.tokens.begin(), draft.realization.tokens.begin() + b);
      Tokens mid = tokenize(variant);
      append(toks, mid);
      append(toks, trailing);
      toks.insert(toks.end(), draft.realization.tokens.begin() + e, draft.realization.tokens.end());
      const std::string question = join_tokens(toks);
      if (contains(question, cond.value)) continue;

      Draft out = draft;
      const std::ptrdiff_t shift =
          static_cast<std::ptrdiff_t>(mid.size() + trailing.size()) - static_cast<std::ptrdiff_t>(e - b);
      for (std::size_t k = 0; k < out.realization.value_spans.size(); ++k) {
        auto& span = out.realization.value_spans[k];
        if (k == ci) {
          span = {b, b + mid.size()};
        } else if (span.first >= e) {
          span.first = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(span.first) + shift);
          span.second = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(span.second) + shift);
        }
      }
      out.realization.tokens = toks;
      out.realization.question = question;
      out.example.tokens = toks;
      out.example.question = question;
      out.example.category = category;
      lexicon.add({t.id, variant, cond.value, category});
      return out;
    }
  }
  throw InapplicableError(std::string(category_name(category)) +
                          " does not apply to any condition value of this query");
}

// ---- make_unanswerable ---------------------------------------------------------

Example make_unanswerable(const Table& t, Rng& rng, const GenConfig& cfg) {
  const auto present = header_tokens(t);
  auto disjoint = [&](const std::string& header) {
    for (const auto& tok : tokenize(header)) {
      if (present.count(tok)) return false;
    }
    return true;
  };
  std::vector<std::string> missing;
  for (const auto& a : topic_of(t).attrs) {
    if (disjoint(a.header)) missing.push_back(a.header);
  }
  if (missing.empty()) {
    for (const auto& topic : world().topics) {
      for (const auto& a : topic.attrs) {
        if (disjoint(a.header)) missing.push_back(a.header);
      }
    }
  }
  const std::string attr = pick(rng, missing);

  Tokens toks;
  static const std::vector<Tokens> openers = {{"what", "is"}, {"tell", "me"}, {"give", "me"}, {"show"}};
  append(toks, pick(rng, openers));
  static const std::vector<Tokens> mods = {{}, {}, {"average"}, {"total"}, {"highest"}, {"lowest"}};
  toks.push_back("the");
  append(toks, pick(rng, mods));
  append(toks, tokenize(attr));
  if (coin(rng, 0.7)) {
    SqlQuery q = sample_query(t, rng, cfg);
    Condition c = q.conditions.front();
    CondPhrase p = condition_phrase(c, t, rng, cfg.schema_omission_rate);
    if (!p.omitted) toks.push_back("where");
    append(toks, p.tokens);
  }
  toks.push_back("?");

  Example ex;
  ex.table_id = t.id;
  ex.tokens = toks;
  ex.question = join_tokens(toks);
  ex.gold = Rejection{};
  ex.category = LinkCategory::None;
  return ex;
}

// ---- build_corpus --------------------------------------------------------------

namespace {

std::string table_id_for(int i) {
  std::string digits = std::to_string(i);
  return "t" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

LinkCategory draw_category(Rng& rng, const GenConfig& cfg) {
  const double u = unit(rng);
  double acc = 0.0;
  LinkCategory last = LinkCategory::None;
  for (const auto& [cat, w] : cfg.category_weights) {
    if (w <= 0.0) continue;
    acc += w;
    last = cat;
    if (u < acc) return cat;
  }
  return last;
}

Draft plain_draft(const Table& t, Rng& rng, const GenConfig& cfg) {
  Draft d;
  SqlQuery q = sample_query(t, rng, cfg);
  d.realization = realize_question(q, t, rng, cfg);
  d.example.table_id = t.id;
  d.example.question = d.realization.question;
  d.example.tokens = d.realization.tokens;
  d.example.gold = std::move(q);
  d.example.category = LinkCategory::None;
  return d;
}

}  // namespace

Corpus build_corpus(const GenConfig& cfg) {
  validate_config(cfg);
  Rng rng(cfg.seed);
  Corpus corpus;

  std::vector<Table> tables;
  for (int i = 0; i < cfg.n_tables; ++i) tables.push_back(sample_table(rng, cfg, table_id_for(i)));

  std::vector<std::size_t> order(tables.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(rng, order);
  const auto n = static_cast<double>(tables.size());
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.split_fractions[0] * n));
  const auto n_valid = std::min(tables.size() - std::min(tables.size(), n_train),
                                static_cast<std::size_t>(std::llround(cfg.split_fractions[1] * n)));
  std::vector<Split> split_of(tables.size(), Split::Test);
  for (std::size_t k = 0; k < order.size(); ++k) {
    split_of[order[k]] = k < n_train ? Split::Train : k < n_train + n_valid ? Split::Valid : Split::Test;
  }

  std::map<LinkCategory, int> histogram;
  int fallbacks = 0, unanswerable = 0;
  double cond_total = 0.0, sel_total = 0.0;
  int answerable = 0;
  for (std::size_t ti = 0; ti < tables.size(); ++ti) {
    const Table& t = tables[ti];
    for (int qi = 0; qi < cfg.n_questions_per_table; ++qi) {
      const double u = unit(rng);
      Example ex;
      if (u < cfg.unanswerable_rate) {
        ex = make_unanswerable(t, rng, cfg);
        ++unanswerable;
      } else if (u < cfg.unanswerable_rate + cfg.entity_link_rate) {
        const LinkCategory cat = draw_category(rng, cfg);
        bool done = false;
        for (int attempt = 0; attempt < 200 && !done; ++attempt) {
          Draft d = plain_draft(t, rng, cfg);
          try {
            ex = perturb(d, t, cat, rng, corpus.lexicon).example;
            done = true;
          } catch (const InapplicableError&) {
          }
        }
        if (!done) {
          ex = plain_draft(t, rng, cfg).example;
          ++fallbacks;
        }
      } else {
        ex = plain_draft(t, rng, cfg).example;
      }
      ex.split = split_of[ti];
      if (ex.answerable()) {
        ++answerable;
        cond_total += static_cast<double>(ex.sql().conditions.size());
        sel_total += static_cast<double>(ex.sql().select.size());
      }
      ++histogram[ex.category];
      corpus.examples.push_back(std::move(ex));
    }
  }
  for (auto& t : tables) corpus.tables.add(std::move(t));

  const auto total = static_cast<double>(corpus.examples.size());
  int linked = 0;
  json cats = json::object();
  for (const auto& [cat, count] : histogram) {
    if (cat != LinkCategory::None) linked += count;
  }
  for (const auto& [cat, count] : histogram) {
    if (cat == LinkCategory::None) continue;
    cats[std::string(category_name(cat))] = linked ? static_cast<double>(count) / linked : 0.0;
  }
  double col_total = 0.0, row_total = 0.0;
  for (const auto& [id, t] : corpus.tables.tables()) {
    col_total += static_cast<double>(t.column_count());
    row_total += static_cast<double>(t.row_count());
  }
  json split_counts = json::object();
  for (Split s : {Split::Train, Split::Valid, Split::Test}) {
    split_counts[std::string(split_name(s))] = corpus.split(s).size();
  }
  corpus.stats = json{{"config", config_to_json(cfg)},
                      {"examples", corpus.examples.size()},
                      {"tables", corpus.tables.size()},
                      {"split_examples", split_counts},
                      {"unanswerable_rate", total ? unanswerable / total : 0.0},
                      {"entity_link_rate", total ? linked / total : 0.0},
                      {"category_fractions", cats},
                      {"perturbation_fallbacks", fallbacks},
                      {"mean_conditions", answerable ? cond_total / answerable : 0.0},
                      {"mean_selects", answerable ? sel_total / answerable : 0.0},
                      {"mean_columns", n ? col_total / n : 0.0},
                      {"mean_rows", n ? row_total / n : 0.0}};
  return corpus;
}

// ---- persistence ---------------------------------------------------------------

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_tables(corpus.tables, dir / "tables.jsonl");
  {
    std::ofstream out(dir / "examples.jsonl", std::ios::binary);
    for (const auto& ex : corpus.examples) out << example_to_json(ex).dump() << '\n';
  }
  {
    std::ofstream out(dir / "lexicon.jsonl", std::ios::binary);
    for (const auto& e : corpus.lexicon.entries()) {
      out << json{{"table_id", e.table_id},
                  {"surface", e.surface},
                  {"canonical", e.canonical},
                  {"category", category_name(e.category)}}
                 .dump()
          << '\n';
    }
  }
  std::ofstream out(dir / "stats.json", std::ios::binary);
  out << corpus.stats.dump(2) << '\n';
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus corpus;
  corpus.tables = load_tables(dir / "tables.jsonl");
  auto read_lines = [](const std::filesystem::path& p, auto&& fn) {
    std::ifstream in(p);
    if (!in) throw ParseError("cannot open " + p.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        fn(json::parse(line));
      } catch (const json::exception& e) {
        throw ParseError(p.filename().string() + " line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  };
  read_lines(dir / "examples.jsonl", [&](const json& j) {
    Example ex = example_from_json(j);
    if (!corpus.tables.contains(ex.table_id)) {
      throw ValidationError("example refers to unknown table " + ex.table_id);
    }
    corpus.examples.push_back(std::move(ex));
  });
  if (std::filesystem::exists(dir / "lexicon.jsonl")) {
    read_lines(dir / "lexicon.jsonl", [&](const json& j) {
      corpus.lexicon.add({j.at("table_id").get<std::string>(), j.at("surface").get<std::string>(),
                          j.at("canonical").get<std::string>(),
                          category_from_name(j.at("category").get<std::string>())});
    });
  }
  if (std::filesystem::exists(dir / "stats.json")) {
    std::ifstream in(dir / "stats.json");
    corpus.stats = json::parse(in);
  }
  return corpus;
}

std::vector<std::pair<std::size_t, std::size_t>> locate_value_spans(const Example& ex,
                                                                    const Lexicon& lexicon) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (!ex.answerable()) return out;
  constexpr auto npos = std::string::npos;
  for (const auto& cond : ex.sql().conditions) {
    std::pair<std::size_t, std::size_t> span{npos, npos};
    std::vector<std::string> candidates = {cond.value};
    for (auto& s : lexicon.surfaces(ex.table_id, cond.value)) candidates.push_back(s);
    for (const auto& cand : candidates) {
      const Tokens needle = tokenize(cand);
      const std::size_t at = find_token_run(ex.tokens, needle);
      if (at != npos) {
        span = {at, at + needle.size()};
        break;
      }
    }
    out.push_back(span);
  }
  return out;
}

}  // namespace nl2sql
