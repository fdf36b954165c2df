#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

#include "doctest.h"
#include "pldr/config.hpp"
#include "pldr/dag.hpp"

using namespace pldr;
namespace fs = std::filesystem;

namespace {

const std::string kBase = "/tmp/pldr_cli_test";

std::string cli_path() {
  const char* p = std::getenv("PLDR_CLI");
  REQUIRE(p != nullptr);
  return p;
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

CliResult run_cli(const std::string& args) {
  static int seq = 0;
  std::string so = kBase + "/stdout" + std::to_string(seq) + ".txt";
  std::string se = kBase + "/stderr" + std::to_string(seq) + ".txt";
  ++seq;
  std::string cmd = cli_path() + " " + args + " >" + so + " 2>" + se;
  int rc = std::system(cmd.c_str());
  CliResult res;
  res.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  res.out = slurp(so);
  res.err = slurp(se);
  return res;
}

// one field per printed line, e.g. "checkpoint <path>"
std::string stdout_field(const std::string& out, const std::string& key) {
  std::istringstream in(out);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + " ", 0) == 0) return line.substr(key.size() + 1);
  return "";
}

RunConfig toy_cfg() {
  RunConfig cfg;
  cfg.run_id = "cli-toy";
  cfg.out_dir = kBase + "/out";
  cfg.precision = "f64";
  cfg.seed = 7;
  cfg.model.vocab_size = 259;
  cfg.model.pad_id = 256;
  cfg.model.end_id = 257;
  cfg.model.d_model = 16;
  cfg.model.n_heads = 2;
  cfg.model.n_layers = 1;
  cfg.model.context_length = 16;
  cfg.model.residual_units = 1;
  cfg.model.metric_gated_size = 8;
  cfg.model.metric_linear_size = 8;
  cfg.data.corpus = kBase + "/ab.txt";
  cfg.data.tokenizer = "byte";
  cfg.train.max_lr = 0.01;
  cfg.train.warmup_steps = 10;
  cfg.train.total_steps = 150;
  cfg.train.batch_size = 4;
  cfg.train.max_epochs = 0;
  cfg.train.shuffle = false;
  cfg.train.log_every = 50;
  cfg.train.val_every = 1000000;
  cfg.train.val_batches = 1;
  cfg.generate.top_k = 1;
  cfg.generate.max_new_tokens = 8;
  return cfg;
}

struct TrainedRun {
  std::string config_path;
  std::string checkpoint_path;
  std::string telemetry_path;
  std::string stdout_text;
};

const TrainedRun& trained() {
  static TrainedRun t = [] {
    fs::remove_all(kBase);
    fs::create_directories(kBase);
    std::ofstream corpus(kBase + "/ab.txt");
    for (int i = 0; i < 12; ++i) {
      for (int j = 0; j < 16; ++j) corpus << "ab";
      corpus << "\n";
    }
    corpus.close();
    RunConfig cfg = toy_cfg();
    TrainedRun r;
    r.config_path = kBase + "/cli-toy.json";
    cfg.save(r.config_path);
    CliResult res = run_cli("pretrain --config " + r.config_path);
    REQUIRE(res.code == 0);
    r.checkpoint_path = stdout_field(res.out, "checkpoint");
    r.telemetry_path = stdout_field(res.out, "telemetry");
    r.stdout_text = res.out;
    return r;
  }();
  return t;
}

}  // namespace

TEST_CASE("pretrain trains and reports") {
  const TrainedRun& t = trained();
  CHECK(t.stdout_text.find("pretrain cli-toy: steps 150") != std::string::npos);
  CHECK(t.stdout_text.find("train_loss ") != std::string::npos);
  CHECK(t.stdout_text.find("DL(A_LM)") != std::string::npos);
  CHECK(fs::exists(t.checkpoint_path));
  CHECK(fs::exists(t.telemetry_path));
}

TEST_CASE("telemetry lines are json records") {
  const TrainedRun& t = trained();
  std::ifstream in(t.telemetry_path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.contains("step"));
    CHECK(j.contains("train_loss"));
    CHECK(j.contains("lr"));
    CHECK(j.contains("dl_alm"));
  }
  CHECK(lines == 3);  // steps 50, 100, 150
}

TEST_CASE("generate is deterministic and honors max_new_tokens") {
  const TrainedRun& t = trained();
  std::string base = "generate --checkpoint " + t.checkpoint_path + " --prompt ab";
  CliResult g1 = run_cli(base + " --max-new-tokens 6");
  CliResult g2 = run_cli(base + " --max-new-tokens 6");
  REQUIRE(g1.code == 0);
  CHECK(g1.out == g2.out);

  CliResult g_short = run_cli(base + " --max-new-tokens 2");
  REQUIRE(g_short.code == 0);
  std::string s6 = g1.out, s2 = g_short.out;
  s6.pop_back();  // trailing newline
  s2.pop_back();
  CHECK(s2.size() < s6.size());
  CHECK(s6.compare(0, s2.size(), s2) == 0);
  CHECK(s2 == "ab");  // memorized alternation
}

TEST_CASE("seeded nucleus sampling is reproducible") {
  const TrainedRun& t = trained();
  std::string cmd = "generate --checkpoint " + t.checkpoint_path +
                    " --prompt ab --top-p 0.9 --top-k 0 --seed 5 --max-new-tokens 8";
  CliResult g1 = run_cli(cmd);
  CliResult g2 = run_cli(cmd);
  REQUIRE(g1.code == 0);
  CHECK(g1.out == g2.out);
}

TEST_CASE("dag-inspect writes a loadable report") {
  const TrainedRun& t = trained();
  std::string csv = kBase + "/inspect.csv";
  CliResult res = run_cli("dag-inspect --checkpoint " + t.checkpoint_path +
                          " --prompt ab --max-new-tokens 4 --out " + csv);
  REQUIRE(res.code == 0);
  CHECK(res.out.find("report " + csv) != std::string::npos);

  std::string text = slurp(csv);
  CHECK(text.rfind("model_id,tensor,lambda,dl_value", 0) == 0);
  DagReport rep = load_dag_report(csv);
  CHECK(rep.model_id == "cli-toy");
  REQUIRE(rep.rows.size() == 4);
  CHECK(rep.rows[0].tensor == "A_LM");
  CHECK(rep.rows[3].tensor == "DLR");
  CHECK_FALSE(rep.rows[0].has_lambda);  // fixture trains unregularized
  CHECK_FALSE(rep.rows[3].has_value);

  std::string copy = kBase + "/inspect_copy.csv";
  save_dag_report(copy, rep);
  CHECK(slurp(copy) == text);
}

TEST_CASE("eval-loss is batch independent and side effect free") {
  const TrainedRun& t = trained();
  RunConfig a = toy_cfg();
  a.train.batch_size = 4;
  RunConfig b = toy_cfg();
  b.train.batch_size = 13;
  b.train.grad_accum = 3;
  std::string pa = kBase + "/eval_a.json";
  std::string pb = kBase + "/eval_b.json";
  a.save(pa);
  b.save(pb);

  CliResult ra = run_cli("eval-loss --config " + pa + " --checkpoint " + t.checkpoint_path);
  CliResult rb = run_cli("eval-loss --config " + pb + " --checkpoint " + t.checkpoint_path);
  CliResult ra2 = run_cli("eval-loss --config " + pa + " --checkpoint " + t.checkpoint_path);
  REQUIRE(ra.code == 0);
  CHECK(ra.out == rb.out);
  CHECK(ra.out == ra2.out);
  CHECK(ra.out.rfind("eval_loss ", 0) == 0);

  CliResult no_cfg = run_cli("eval-loss --checkpoint " + t.checkpoint_path);
  REQUIRE(no_cfg.code == 0);  // config recovered from the checkpoint
  CHECK(no_cfg.out == ra.out);
}

TEST_CASE("missing corpus exits with code 2") {
  const TrainedRun& t = trained();
  RunConfig cfg = toy_cfg();
  cfg.data.corpus = kBase + "/does_not_exist.txt";
  std::string p = kBase + "/missing_corpus.json";
  cfg.save(p);
  CliResult res = run_cli("pretrain --config " + p);
  CHECK(res.code == 2);
  CHECK(res.err.find("corpus file not found") != std::string::npos);

  cfg.data.corpus = "";
  cfg.save(p);
  res = run_cli("pretrain --config " + p);
  CHECK(res.code == 2);
  CHECK(res.err.find("no training corpus path configured") != std::string::npos);
  (void)t;
}

TEST_CASE("config mistakes produce named diagnostics") {
  trained();
  std::string p = kBase + "/bad_key.json";
  std::ofstream(p) << R"({"model": {"d_modell": 64}})";
  CliResult res = run_cli("pretrain --config " + p);
  CHECK(res.code == 1);
  CHECK(res.err.find("config error") != std::string::npos);
  CHECK(res.err.find("model.d_modell") != std::string::npos);

  res = run_cli("pretrain --config " + kBase + "/nope.json");
  CHECK(res.code == 1);
  CHECK(res.err.find("cannot open config file") != std::string::npos);

  res = run_cli("pretrain");
  CHECK(res.code == 1);
  CHECK(res.err.find("--config is required") != std::string::npos);

  res = run_cli("generate --prompt hi");
  CHECK(res.code == 1);
  CHECK(res.err.find("--checkpoint is required") != std::string::npos);
}

TEST_CASE("checkpoint and config model shapes must agree") {
  const TrainedRun& t = trained();
  RunConfig cfg = toy_cfg();
  cfg.model.d_model = 32;
  cfg.model.metric_linear_size = 16;
  std::string p = kBase + "/wrong_shape.json";
  cfg.save(p);
  CliResult res = run_cli("generate --config " + p + " --checkpoint " + t.checkpoint_path +
                          " --prompt ab");
  CHECK(res.code == 1);
  CHECK(res.err.find("model.d_model") != std::string::npos);
}
