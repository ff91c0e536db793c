#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "nl2sql_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run cli(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt";
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = std::string("env -u RNG_SEED ") + NL2SQL_CLI_PATH + " " + args + " >" +
                          out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string last_line(const std::string& s) {
  std::string t = s;
  while (!t.empty() && t.back() == '\n') t.pop_back();
  const auto pos = t.rfind('\n');
  return pos == std::string::npos ? t : t.substr(pos + 1);
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("usage errors exit with code 2 and a json error line") {
  Run r = cli("");
  CHECK(r.code == 2);
  r = cli("train --bogus-flag 1");
  CHECK(r.code == 2);
  CHECK(r.err.find("Usage") != std::string::npos);
  const auto j = nlohmann::json::parse(last_line(r.err));
  CHECK(j.at("error") == "usage");
}

TEST_CASE("exec prints one json row per result row") {
  const fs::path dir = work_dir();
  write(dir / "t.jsonl",
        R"({"id":"t","name":"shop","header":["city","price"],"types":["text","real"],"rows":[["Oslo",10],["Lima",2.5],["Oslo",4]]})"
        "\n");
  write(dir / "count.json", R"({"sel":[0],"agg":[4],"cond_conn_op":0,"conds":[[0,2,"Oslo"]]})");
  Run r = cli("exec --table " + (dir / "t.jsonl").string() + " --sql " + (dir / "count.json").string());
  CHECK(r.code == 0);
  CHECK(r.out == "[2]\n");
  write(dir / "rows.json", R"({"sel":[1],"agg":[0],"cond_conn_op":0,"conds":[[1,1,"5"]]})");
  r = cli("exec --table " + (dir / "t.jsonl").string() + " --sql " + (dir / "rows.json").string());
  CHECK(r.out == "[2.5]\n[4]\n");
  write(dir / "bad.json", R"({"sel":[7],"agg":[0]})");
  r = cli("exec --table " + (dir / "t.jsonl").string() + " --sql " + (dir / "bad.json").string());
  CHECK(r.code == 1);
  CHECK(nlohmann::json::parse(last_line(r.err)).at("error") == "validation");
}

TEST_CASE("configuration problems exit with code 3") {
  const fs::path dir = work_dir();
  write(dir / "bad_gen.json", R"({"entity_link_rate": 2.0})");
  Run r = cli("gen-corpus --config " + (dir / "bad_gen.json").string() + " --out " + (dir / "x").string());
  CHECK(r.code == 3);
  CHECK(nlohmann::json::parse(last_line(r.err)).at("error") == "config");
  r = cli("train --corpus " + (dir / "missing").string() + " --out " + (dir / "m.ckpt").string());
  CHECK(r.code == 3);
  r = cli("predict --ckpt " + (dir / "missing.ckpt").string() + " --corpus " + (dir / "x").string() +
          " --out " + (dir / "p.jsonl").string());
  CHECK(r.code == 3);
  r = cli("train --corpus x --out y --resolver oracle");
  CHECK(r.code == 3);
}

TEST_CASE("grad-check passes") {
  const Run r = cli("grad-check");
  CHECK(r.code == 0);
  CHECK(r.out.find("max relative error") != std::string::npos);
}

TEST_CASE("runs log the seed and a config hash; the seed flag beats the environment") {
  const fs::path dir = work_dir();
  Run r = cli("gen-corpus --n-tables 5 --seed 9 --out " + (dir / "s9").string());
  REQUIRE(r.code == 0);
  const auto start = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
  CHECK(start.at("seed") == 9);
  CHECK(start.at("config_hash").get<std::string>().size() > 0);

  const std::string env_cmd = std::string("RNG_SEED=9 ") + NL2SQL_CLI_PATH + " gen-corpus --n-tables 5 --out " +
                              (dir / "env9").string() + " 2>/dev/null";
  REQUIRE(std::system(env_cmd.c_str()) == 0);
  CHECK(slurp(dir / "env9" / "examples.jsonl") == slurp(dir / "s9" / "examples.jsonl"));
}

TEST_CASE("gen-corpus, train, predict and eval are reproducible end to end") {
  const fs::path dir = work_dir();
  write(dir / "gen.json", R"({"seed": 4, "n_tables": 30, "n_questions_per_table": 6})");
  write(dir / "train.json", R"({"seed": 2, "epochs": 1, "hidden": 8, "dev_eval_examples": 10})");
  for (const char* tag : {"a", "b"}) {
    const fs::path d = dir / tag;
    REQUIRE(cli("gen-corpus --config " + (dir / "gen.json").string() + " --out " + (d / "corpus").string()).code == 0);
    REQUIRE(cli("train --config " + (dir / "train.json").string() + " --corpus " + (d / "corpus").string() +
                " --out " + (d / "model.ckpt").string() + " --history " + (d / "history.json").string())
                .code == 0);
    REQUIRE(cli("predict --ckpt " + (d / "model.ckpt").string() + " --corpus " + (d / "corpus").string() +
                " --resolver offline --split all --out " + (d / "pred.jsonl").string())
                .code == 0);
    const Run r = cli("eval --gold " + (d / "corpus" / "examples.jsonl").string() + " --pred " +
                      (d / "pred.jsonl").string() + " --tables " + (d / "corpus" / "tables.jsonl").string() +
                      " --egd 3 --out " + (d / "report.json").string());
    REQUIRE(r.code == 0);
    CHECK(r.out.find("Execution-guided") != std::string::npos);
  }
  for (const char* f : {"corpus/examples.jsonl", "corpus/tables.jsonl", "model.ckpt", "history.json",
                        "pred.jsonl", "report.json"}) {
    INFO(f);
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  const auto report = nlohmann::json::parse(slurp(dir / "a" / "report.json"));
  CHECK(report.at("metrics").at("examples") == 180);
  CHECK(report.at("egd_metrics").at("answerability").at("recall") == 0.0);
}
