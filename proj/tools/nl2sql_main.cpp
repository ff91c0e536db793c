// nl2sql: corpus generation, training, prediction, evaluation, execution and
// gradient checking from one binary.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "nl2sql/corpus_gen.hpp"
#include "nl2sql/errors.hpp"
#include "nl2sql/eval_harness.hpp"
#include "nl2sql/grad_suite.hpp"
#include "nl2sql/numeric.hpp"
#include "nl2sql/parser_model.hpp"
#include "nl2sql/sql_exec.hpp"
#include "nl2sql/table_store.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nl2sql;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;

void log_event(const json& j) { std::cerr << j.dump() << '\n'; }

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

void log_start(const std::string& command, std::uint64_t seed, const json& config) {
  log_event({{"event", "start"},
             {"command", command},
             {"seed", seed},
             {"config_hash", hex64(fnv1a64(config.dump()))},
             {"config", config}});
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("RNG_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto seed = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument(v);
    return seed;
  } catch (const std::exception&) {
    throw ConfigError(std::string("RNG_SEED is not an unsigned integer: ") + v);
  }
}

// flag > config file > RNG_SEED > built-in default.
std::uint64_t pick_seed(const std::optional<std::uint64_t>& flag, const json& file,
                        std::uint64_t fallback) {
  if (flag) return *flag;
  if (file.contains("seed")) return file.at("seed").get<std::uint64_t>();
  if (auto env = env_seed()) return *env;
  return fallback;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  return out;
}

std::vector<Example> read_examples(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(example_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path.filename().string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ---- subcommands -------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_tables, per_table;
  std::optional<double> link_rate, unanswerable_rate;
};

int run_gen(const GenArgs& a) {
  json file = a.config.empty() ? json::object() : read_json_file(a.config);
  GenConfig cfg = config_from_json(file);
  cfg.seed = pick_seed(a.seed, file, cfg.seed);
  if (a.n_tables) cfg.n_tables = *a.n_tables;
  if (a.per_table) cfg.n_questions_per_table = *a.per_table;
  if (a.link_rate) cfg.entity_link_rate = *a.link_rate;
  if (a.unanswerable_rate) cfg.unanswerable_rate = *a.unanswerable_rate;
  validate_config(cfg);
  log_start("gen-corpus", cfg.seed, config_to_json(cfg));
  const Corpus corpus = build_corpus(cfg);
  save_corpus(corpus, a.out);
  log_event({{"event", "done"}, {"examples", corpus.examples.size()}, {"tables", corpus.tables.size()},
             {"out", a.out}});
  return 0;
}

struct TrainArgs {
  std::string config, corpus, out, history, resolver;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
};

int run_train(const TrainArgs& a) {
  json file = a.config.empty() ? json::object() : read_json_file(a.config);
  TrainConfig cfg = train_config_from_json(file);
  cfg.seed = pick_seed(a.seed, file, cfg.seed);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (!a.resolver.empty()) cfg.resolver = resolver_from_name(a.resolver);
  validate_train_config(cfg);
  require_file(fs::path(a.corpus) / "examples.jsonl", "corpus");
  log_start("train", cfg.seed, train_config_to_json(cfg));
  const Corpus corpus = load_corpus(a.corpus);
  json history = json::array();
  TrainResult result = train(corpus, cfg, [&](const EpochRecord& e) {
    json j = epoch_to_json(e);
    history.push_back(j);
    json line{{"event", "epoch"}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss}};
    if (e.has_dev) {
      line["dev_logic_form"] = e.dev.logic_form_acc;
      line["dev_s_col"] = e.dev.at(Subtask::SCol);
    }
    log_event(line);
  });
  result.model.save(a.out);
  if (!a.history.empty()) open_out(a.history) << history.dump(2) << '\n';
  log_event({{"event", "done"}, {"out", a.out}});
  return 0;
}

struct PredictArgs {
  std::string ckpt, corpus, resolver, out, split = "valid";
  std::size_t candidates = 10;
};

int run_predict(const PredictArgs& a) {
  require_file(a.ckpt, "checkpoint");
  require_file(fs::path(a.corpus) / "examples.jsonl", "corpus");
  const ParserModel model = ParserModel::load(a.ckpt);
  const Resolver resolver =
      a.resolver.empty() ? model.config().resolver : resolver_from_name(a.resolver);
  json cfg{{"ckpt", a.ckpt}, {"resolver", resolver_name(resolver)}, {"split", a.split},
           {"candidates", a.candidates}};
  log_start("predict", model.config().seed, cfg);
  const Corpus corpus = load_corpus(a.corpus);
  std::optional<Split> only;
  if (a.split != "all") only = split_from_name(a.split);
  auto out = open_out(a.out);
  std::size_t n = 0;
  for (const auto& ex : corpus.examples) {
    if (only && ex.split != *only) continue;
    const Prediction p = model.predict(ex, corpus.tables.at(ex.table_id), resolver, a.candidates);
    out << prediction_to_json(p, ex).dump() << '\n';
    ++n;
  }
  log_event({{"event", "done"}, {"predictions", n}, {"out", a.out}});
  return 0;
}

struct EvalArgs {
  std::string gold, pred, tables, out;
  std::size_t egd = 0;
};

int run_eval(const EvalArgs& a) {
  require_file(a.gold, "gold file");
  require_file(a.pred, "prediction file");
  require_file(a.tables, "table file");
  json cfg{{"gold", a.gold}, {"pred", a.pred}, {"tables", a.tables}, {"egd", a.egd}};
  log_start("eval", 0, cfg);
  const TableSet tables = load_tables(a.tables);
  std::vector<Example> golds = read_examples(a.gold);
  std::vector<Example> pred_rows = read_examples(a.pred);
  std::vector<Prediction> preds;
  {
    std::ifstream in(a.pred);
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      preds.push_back(prediction_from_json(json::parse(line)));
    }
  }
  // Align gold examples to the prediction file by (table, question) in order.
  std::vector<Example> aligned;
  std::size_t g = 0;
  for (const auto& p : pred_rows) {
    while (g < golds.size() &&
           (golds[g].table_id != p.table_id || golds[g].question != p.question)) {
      ++g;
    }
    if (g == golds.size()) {
      throw ContractViolation("prediction for '" + p.question + "' has no gold example in order");
    }
    aligned.push_back(golds[g++]);
  }
  for (const auto& ex : aligned) {
    if (!tables.contains(ex.table_id)) throw ValidationError("unknown table " + ex.table_id);
  }
  const MetricsReport plain = score(preds, aligned, tables);
  json report{{"metrics", report_to_json(plain)},
              {"markdown", report_to_markdown(plain, "Plain decoding")}};
  if (a.egd > 0) {
    std::vector<Prediction> guided;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      guided.push_back(egd_decode(preds[i], tables.at(aligned[i].table_id), a.egd));
    }
    const MetricsReport egd = score(guided, aligned, tables);
    report["egd_budget"] = a.egd;
    report["egd_metrics"] = report_to_json(egd);
    report["markdown"] = report_to_markdown(plain, "Plain decoding") + "\n" +
                         report_to_markdown(egd, "Execution-guided decoding (budget " +
                                                     std::to_string(a.egd) + ")");
  }
  open_out(a.out) << report.dump(2) << '\n';
  std::cout << report["markdown"].get<std::string>();
  return 0;
}

struct ExecArgs {
  std::string table, sql, table_id;
  bool as_json = false;
};

int run_exec(const ExecArgs& a) {
  require_file(a.table, "table file");
  require_file(a.sql, "sql file");
  const TableSet tables = load_tables(a.table);
  if (tables.size() == 0) throw ValidationError("table file is empty");
  const Table& t = a.table_id.empty() ? tables.tables().begin()->second : tables.at(a.table_id);
  const SqlQuery q = sql_from_json(read_json_file(a.sql));
  const auto problems = validate(q, t);
  if (!problems.empty()) throw ValidationError("invalid query: " + problems.front());
  const ResultSet rs = execute(q, t);
  const json j = result_to_json(rs);
  if (a.as_json) {
    std::cout << j.dump() << '\n';
  } else {
    for (const auto& row : j.at("rows")) std::cout << row.dump() << '\n';
  }
  return 0;
}

int run_grad_check(std::optional<std::uint64_t> seed_flag) {
  const std::uint64_t seed = pick_seed(seed_flag, json::object(), 7);
  log_start("grad-check", seed, json{{"eps", 1e-5}, {"tolerance", 1e-4}});
  double worst = 0.0;
  for (const auto& r : run_gradient_suite(seed)) {
    worst = std::max(worst, r.max_rel_error);
    std::cout << r.name << ' ' << r.max_rel_error << '\n';
  }
  std::cout << "max relative error " << worst << '\n';
  return worst < 1e-4 ? 0 : kExitFailure;
}

struct CompareArgs {
  std::string ckpt, corpus, out, split = "valid";
};

int run_compare(const CompareArgs& a) {
  require_file(a.ckpt, "checkpoint");
  require_file(fs::path(a.corpus) / "examples.jsonl", "corpus");
  const ParserModel model = ParserModel::load(a.ckpt);
  log_start("compare-resolvers", model.config().seed, json{{"ckpt", a.ckpt}, {"split", a.split}});
  const Corpus corpus = load_corpus(a.corpus);
  std::vector<Example> examples;
  for (const Example* ex : corpus.split(split_from_name(a.split))) examples.push_back(*ex);
  const auto rows = compare_resolvers(model, examples, corpus.tables);
  const std::string md = ablation_markdown(rows);
  if (!a.out.empty()) {
    open_out(a.out) << json{{"rows", ablation_to_json(rows)}, {"markdown", md}}.dump(2) << '\n';
  }
  std::cout << md;
  return 0;
}

void error_line(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nl2sql: table question answering lab"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic corpus");
  gen_cmd->add_option("--config", gen.config, "Generator config JSON");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--n-tables", gen.n_tables, "Number of tables");
  gen_cmd->add_option("--questions-per-table", gen.per_table, "Questions per table");
  gen_cmd->add_option("--entity-link-rate", gen.link_rate, "Fraction of perturbed questions");
  gen_cmd->add_option("--unanswerable-rate", gen.unanswerable_rate, "Fraction of unanswerable questions");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the parser");
  train_cmd->add_option("--config", tr.config, "Training config JSON");
  train_cmd->add_option("--corpus", tr.corpus, "Corpus directory")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--seed", tr.seed, "Random seed");
  train_cmd->add_option("--epochs", tr.epochs, "Training epochs");
  train_cmd->add_option("--resolver", tr.resolver, "span | offline | end2end");
  train_cmd->add_option("--history", tr.history, "Write per-epoch history JSON here");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Decode a corpus split");
  predict_cmd->add_option("--ckpt", pr.ckpt, "Checkpoint path")->required();
  predict_cmd->add_option("--corpus", pr.corpus, "Corpus directory")->required();
  predict_cmd->add_option("--resolver", pr.resolver, "span | offline | end2end");
  predict_cmd->add_option("--out", pr.out, "Prediction JSONL")->required();
  predict_cmd->add_option("--split", pr.split, "train | valid | test | all");
  predict_cmd->add_option("--candidates", pr.candidates, "Ranked candidates kept per example");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions");
  eval_cmd->add_option("--gold", ev.gold, "Gold examples JSONL")->required();
  eval_cmd->add_option("--pred", ev.pred, "Prediction JSONL")->required();
  eval_cmd->add_option("--tables", ev.tables, "Tables JSONL")->required();
  eval_cmd->add_option("--egd", ev.egd, "Execution-guided decoding retry budget");
  eval_cmd->add_option("--out", ev.out, "Report JSON")->required();

  ExecArgs ex;
  auto* exec_cmd = app.add_subcommand("exec", "Execute one SQL JSON against a table");
  exec_cmd->add_option("--table", ex.table, "Tables JSONL")->required();
  exec_cmd->add_option("--sql", ex.sql, "SQL JSON file")->required();
  exec_cmd->add_option("--table-id", ex.table_id, "Table id when the file holds several");
  exec_cmd->add_flag("--json", ex.as_json, "Print the full result set as JSON");

  std::optional<std::uint64_t> grad_seed;
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  grad_cmd->add_option("--seed", grad_seed, "Random seed");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare-resolvers", "Score one checkpoint under each resolver");
  cmp_cmd->add_option("--ckpt", cmp.ckpt, "Checkpoint path")->required();
  cmp_cmd->add_option("--corpus", cmp.corpus, "Corpus directory")->required();
  cmp_cmd->add_option("--split", cmp.split, "train | valid | test");
  cmp_cmd->add_option("--out", cmp.out, "Ablation JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    error_line("usage", e.what());
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(tr);
    if (*predict_cmd) return run_predict(pr);
    if (*eval_cmd) return run_eval(ev);
    if (*exec_cmd) return run_exec(ex);
    if (*grad_cmd) return run_grad_check(grad_seed);
    if (*cmp_cmd) return run_compare(cmp);
  } catch (const ConfigError& e) {
    error_line("config", e.what());
    return kExitConfig;
  } catch (const ParseError& e) {
    error_line("parse", e.what());
    return kExitFailure;
  } catch (const ValidationError& e) {
    error_line("validation", e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    error_line("runtime", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
