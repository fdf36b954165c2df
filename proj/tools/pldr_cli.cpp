#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pldr/generate.hpp"
#include "pldr/train.hpp"

namespace {

using namespace pldr;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitMissingCorpus = 2;

struct Args {
  std::string config_path;
  std::string checkpoint_path;
  std::string prompt;
  bool prompt_set = false;
  std::string out_path;
  double top_p = -1.0;
  int top_k = -1;
  int max_new_tokens = -1;
  int64_t seed = -1;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, Args& args) {
  cmd->add_option("--config", args.config_path, "run config file (canonical JSON)");
  cmd->add_option("--checkpoint", args.checkpoint_path, "checkpoint container path");
  cmd->add_option("--prompt", args.prompt, "prompt text")->each([&args](const std::string&) {
    args.prompt_set = true;
  });
  cmd->add_option("--top-p", args.top_p, "nucleus sampling mass (0,1]");
  cmd->add_option("--top-k", args.top_k, "sample from the k most likely tokens");
  cmd->add_option("--max-new-tokens", args.max_new_tokens, "generation cap");
  cmd->add_option("--seed", args.seed, "rng seed")->each([&args](const std::string&) {
    args.seed_set = true;
  });
  cmd->add_option("--out", args.out_path, "output path or directory override");
}

// flags take precedence over config file keys
void apply_overrides(RunConfig& cfg, const Args& args) {
  if (args.seed_set) cfg.seed = static_cast<uint64_t>(args.seed);
  if (args.top_p >= 0.0) cfg.generate.top_p = args.top_p;
  if (args.top_k >= 0) cfg.generate.top_k = args.top_k;
  if (args.max_new_tokens >= 0) cfg.generate.max_new_tokens = args.max_new_tokens;
}

Tokenizer make_tokenizer(const RunConfig& cfg) {
  Tokenizer tok = Tokenizer::from_spec(cfg.data.tokenizer, cfg.data.digit_split);
  if (tok.vocab_size() != cfg.model.vocab_size)
    throw config_error("model.vocab_size is " + std::to_string(cfg.model.vocab_size) +
                       " but the tokenizer has " + std::to_string(tok.vocab_size()) +
                       " pieces");
  if (tok.pad_id() != cfg.model.pad_id || tok.end_id() != cfg.model.end_id)
    throw config_error("model pad/end ids do not match the tokenizer");
  return tok;
}

std::vector<PackedChunk> pack_required_corpus(const std::string& path, const Tokenizer& tok,
                                              int context_length, const char* which) {
  if (path.empty()) {
    std::cerr << "error: no " << which << " corpus path configured\n";
    std::exit(kExitMissingCorpus);
  }
  if (!std::filesystem::exists(path)) {
    std::cerr << "error: " << which << " corpus file not found: " << path << "\n";
    std::exit(kExitMissingCorpus);
  }
  std::vector<PackedChunk> chunks = pack_corpus_file(path, tok, context_length);
  if (chunks.empty()) {
    std::cerr << "error: " << which << " corpus is empty: " << path << "\n";
    std::exit(kExitMissingCorpus);
  }
  return chunks;
}

// prompts are encoded without the trailing end marker; an empty prompt
// decodes from the document separator alone
std::vector<int> prompt_ids(const Tokenizer& tok, const std::string& prompt) {
  std::vector<int> ids = tok.encode(prompt);
  while (!ids.empty() && ids.back() == tok.end_id()) ids.pop_back();
  if (ids.empty()) ids.push_back(tok.end_id());
  return ids;
}

template <typename T>
int run_pretrain(RunConfig cfg, const Args& args) {
  Tokenizer tok = make_tokenizer(cfg);
  std::vector<PackedChunk> train_chunks =
      pack_required_corpus(cfg.data.corpus, tok, cfg.model.context_length, "training");
  std::vector<PackedChunk> val_chunks;
  if (!cfg.data.val_corpus.empty())
    val_chunks =
        pack_required_corpus(cfg.data.val_corpus, tok, cfg.model.context_length, "validation");

  Model<T> model(cfg.model, cfg.seed);
  CheckpointData resume;
  bool resuming = !args.checkpoint_path.empty();
  if (resuming) resume = load_checkpoint(args.checkpoint_path);

  TelemetryWriter telemetry(cfg.out_dir, cfg.run_id, resuming);
  auto t0 = std::chrono::steady_clock::now();
  TrainResult result = train_loop(model, cfg, train_chunks, val_chunks,
                                  resuming ? &resume : nullptr, &telemetry);
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  DagReport rep = dag_report_for_sequence(
      model, std::vector<int>(train_chunks[0].ids.begin(),
                              train_chunks[0].ids.begin() +
                                  std::min(train_chunks[0].pad_start, 64)),
      cfg.run_id, cfg.train.lambda_alm, cfg.train.lambda_ap, cfg.train.lambda_glm);

  std::printf("pretrain %s: steps %lld epochs %d\n", cfg.run_id.c_str(),
              static_cast<long long>(result.step), result.epoch);
  std::printf("train_loss %.6f train_acc %.4f rejected_steps %d%s\n", result.train_loss,
              result.train_acc, result.rejected_steps,
              result.early_stopped ? " (early stop)" : "");
  std::fputs(dag_report_table(rep).c_str(), stdout);
  std::printf("wall_time_s %.1f\n", wall);
  std::printf("checkpoint %s\n", result.checkpoint_path.c_str());
  std::printf("telemetry %s\n", telemetry.path().c_str());
  return kExitOk;
}

template <typename T>
Model<T> model_from_checkpoint(const CheckpointData& data, const RunConfig& cfg) {
  Model<T> model(cfg.model, cfg.seed);
  restore_checkpoint<T>(data, model, nullptr, cfg);
  return model;
}

template <typename T>
int run_generate(const RunConfig& cfg, const CheckpointData& data, const Args& args) {
  cfg.generate.validate();
  Tokenizer tok = make_tokenizer(cfg);
  Model<T> model = model_from_checkpoint<T>(data, cfg);
  Rng rng(cfg.seed);
  GenerationResult res = generate(model, prompt_ids(tok, args.prompt), cfg.generate, rng);
  std::cout << tok.decode(res.continuation) << "\n";
  if (res.context_overflow) std::cerr << "note: context window overflowed while decoding\n";
  return kExitOk;
}

template <typename T>
int run_dag_inspect(const RunConfig& cfg, const CheckpointData& data, const Args& args) {
  Tokenizer tok = make_tokenizer(cfg);
  Model<T> model = model_from_checkpoint<T>(data, cfg);
  int n_gen = args.max_new_tokens >= 0 ? args.max_new_tokens : 50;
  DagReport rep =
      dag_inference_report(model, prompt_ids(tok, args.prompt), n_gen, cfg.run_id,
                           cfg.train.lambda_alm, cfg.train.lambda_ap, cfg.train.lambda_glm);
  std::string out = args.out_path;
  if (out.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    out = cfg.out_dir + "/" + cfg.run_id + "_dag.csv";
  }
  save_dag_report(out, rep);
  std::fputs(dag_report_table(rep).c_str(), stdout);
  std::printf("report %s\n", out.c_str());
  return kExitOk;
}

template <typename T>
int run_eval_loss(const RunConfig& cfg, const CheckpointData& data, const Args&) {
  Tokenizer tok = make_tokenizer(cfg);
  const std::string& path = cfg.data.val_corpus.empty() ? cfg.data.corpus : cfg.data.val_corpus;
  std::vector<PackedChunk> chunks =
      pack_required_corpus(path, tok, cfg.model.context_length, "evaluation");
  Model<T> model = model_from_checkpoint<T>(data, cfg);
  EvalResult res = evaluate(model, chunks, 0);
  std::printf("eval_loss %.6f eval_acc %.4f tokens %lld\n", res.loss, res.acc,
              static_cast<long long>(res.total));
  TelemetryWriter telemetry(cfg.out_dir, cfg.run_id, true);
  TelemetryRecord rec;
  rec.step = static_cast<int64_t>(data.step);
  rec.epoch = data.epoch;
  rec.has_val = true;
  rec.val_loss = res.loss;
  rec.val_acc = res.acc;
  telemetry.log(rec);
  return kExitOk;
}

// config comes from --config when given, else from the checkpoint container
RunConfig resolve_config(const Args& args, const CheckpointData* data) {
  if (!args.config_path.empty()) return RunConfig::load(args.config_path);
  if (data) {
    RunConfig cfg = RunConfig::from_json(data->config_json);
    cfg.precision = data->dtype_size == 8 ? "f64" : "f32";
    return cfg;
  }
  throw config_error("--config is required");
}

template <template <typename> class Fn>
int dispatch_checkpoint_cmd(const Args& args) {
  if (args.checkpoint_path.empty()) throw config_error("--checkpoint is required");
  CheckpointData data = load_checkpoint(args.checkpoint_path);
  RunConfig cfg = resolve_config(args, &data);
  apply_overrides(cfg, args);
  cfg.validate();
  if (cfg.precision == "f64") return Fn<double>()(cfg, data, args);
  return Fn<float>()(cfg, data, args);
}

template <typename T>
struct GenerateFn {
  int operator()(const RunConfig& c, const CheckpointData& d, const Args& a) {
    return run_generate<T>(c, d, a);
  }
};

template <typename T>
struct DagInspectFn {
  int operator()(const RunConfig& c, const CheckpointData& d, const Args& a) {
    return run_dag_inspect<T>(c, d, a);
  }
};

template <typename T>
struct EvalLossFn {
  int operator()(const RunConfig& c, const CheckpointData& d, const Args& a) {
    return run_eval_loss<T>(c, d, a);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PLDR language model trainer and inspector"};
  app.require_subcommand(1);

  Args args;
  CLI::App* pretrain = app.add_subcommand("pretrain", "train a model from a run config");
  CLI::App* gen = app.add_subcommand("generate", "decode a continuation from a checkpoint");
  CLI::App* dag = app.add_subcommand("dag-inspect", "DAG loss report for a checkpoint");
  CLI::App* ev = app.add_subcommand("eval-loss", "mean masked cross entropy over a corpus");
  for (CLI::App* cmd : {pretrain, gen, dag, ev}) add_common(cmd, args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) {
      RunConfig cfg = resolve_config(args, nullptr);
      apply_overrides(cfg, args);
      if (!args.out_path.empty()) cfg.out_dir = args.out_path;
      cfg.validate();
      if (cfg.precision == "f64") return run_pretrain<double>(cfg, args);
      return run_pretrain<float>(cfg, args);
    }
    if (gen->parsed()) return dispatch_checkpoint_cmd<GenerateFn>(args);
    if (dag->parsed()) return dispatch_checkpoint_cmd<DagInspectFn>(args);
    if (ev->parsed()) return dispatch_checkpoint_cmd<EvalLossFn>(args);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
