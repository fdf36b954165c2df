#include "pldr/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace pldr {

using nlohmann::json;

void ModelConfig::validate() const {
  if (flavor != "v5" && flavor != "v9") throw config_error("model.flavor must be v5 or v9");
  if (vocab_size < 2) throw config_error("model.vocab_size too small");
  if (n_heads < 1 || d_model < 1 || n_layers < 1) throw config_error("model sizes must be positive");
  if (d_model % n_heads != 0) throw config_error("model.d_model must be divisible by n_heads");
  if (d_k() % 2 != 0) throw config_error("per-head width must be even for rotary");
  if (context_length < 2) throw config_error("model.context_length must be at least 2");
  if (flavor == "v5" && metric_linear_size != d_k())
    throw config_error("model.metric_linear_size must equal d_model/n_heads for v5");
  if (residual_units < 1 || metric_gated_size < 1 || metric_linear_size < 1)
    throw config_error("metric learner sizes must be positive");
  if (pad_id < 0 || pad_id >= vocab_size || end_id < 0 || end_id >= vocab_size)
    throw config_error("pad_id/end_id out of vocab range");
  if (pad_id == end_id) throw config_error("pad_id and end_id must differ");
}

void TrainConfig::validate() const {
  if (warmup_steps < 0 || total_steps < 1 || warmup_steps >= total_steps)
    throw config_error("train.warmup_steps must be below total_steps");
  if (final_lr_fraction <= 0.0 || final_lr_fraction > 1.0)
    throw config_error("train.final_lr_fraction must be in (0,1]");
  if (batch_size < 1 || grad_accum < 1) throw config_error("train.batch_size/grad_accum must be positive");
  if (lambda_alm < 0 || lambda_ap < 0 || lambda_glm < 0)
    throw config_error("train lambda coefficients must be nonnegative");
  if (max_epochs < 0) throw config_error("train.max_epochs must be nonnegative");
  if (telemetry_scale <= 0) throw config_error("train.telemetry_scale must be positive");
}

void GenerationParams::validate() const {
  if (top_p < 0.0 || top_p > 1.0) throw config_error("generate.top_p must be in (0,1]");
  if (top_k < 0) throw config_error("generate.top_k must be nonnegative");
  if (max_new_tokens < 1) throw config_error("generate.max_new_tokens must be positive");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  generate.validate();
  if (precision != "f32" && precision != "f64") throw config_error("precision must be f32 or f64");
}

namespace {

void reject_unknown(const json& j, const std::string& section,
                    std::initializer_list<const char*> known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok)
      throw config_error("unknown config key: " + (section.empty() ? "" : section + ".") + it.key());
  }
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json model_to_json(const ModelConfig& m) {
  return json{{"flavor", m.flavor},
              {"vocab_size", m.vocab_size},
              {"d_model", m.d_model},
              {"n_layers", m.n_layers},
              {"n_heads", m.n_heads},
              {"context_length", m.context_length},
              {"residual_units", m.residual_units},
              {"metric_gated_size", m.metric_gated_size},
              {"metric_linear_size", m.metric_linear_size},
              {"rope_base", m.rope_base},
              {"ln_eps", m.ln_eps},
              {"power_floor", m.power_floor},
              {"pad_id", m.pad_id},
              {"end_id", m.end_id}};
}

ModelConfig model_from_json(const json& j) {
  reject_unknown(j, "model",
                 {"flavor", "vocab_size", "d_model", "n_layers", "n_heads", "context_length",
                  "residual_units", "metric_gated_size", "metric_linear_size", "rope_base",
                  "ln_eps", "power_floor", "pad_id", "end_id"});
  ModelConfig m;
  take(j, "flavor", m.flavor);
  take(j, "vocab_size", m.vocab_size);
  take(j, "d_model", m.d_model);
  take(j, "n_layers", m.n_layers);
  take(j, "n_heads", m.n_heads);
  take(j, "context_length", m.context_length);
  take(j, "residual_units", m.residual_units);
  take(j, "metric_gated_size", m.metric_gated_size);
  take(j, "metric_linear_size", m.metric_linear_size);
  take(j, "rope_base", m.rope_base);
  take(j, "ln_eps", m.ln_eps);
  take(j, "power_floor", m.power_floor);
  take(j, "pad_id", m.pad_id);
  take(j, "end_id", m.end_id);
  return m;
}

json train_to_json(const TrainConfig& t) {
  return json{{"max_lr", t.max_lr},
              {"warmup_steps", t.warmup_steps},
              {"total_steps", t.total_steps},
              {"final_lr_fraction", t.final_lr_fraction},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},
              {"weight_decay", t.weight_decay},
              {"clip_norm", t.clip_norm},
              {"batch_size", t.batch_size},
              {"grad_accum", t.grad_accum},
              {"lambda_alm", t.lambda_alm},
              {"lambda_ap", t.lambda_ap},
              {"lambda_glm", t.lambda_glm},
              {"max_epochs", t.max_epochs},
              {"early_stop_train_loss", t.early_stop_train_loss},
              {"shuffle", t.shuffle},
              {"telemetry_scale", t.telemetry_scale},
              {"log_every", t.log_every},
              {"val_every", t.val_every},
              {"val_batches", t.val_batches},
              {"checkpoint_every", t.checkpoint_every}};
}

TrainConfig train_from_json(const json& j) {
  reject_unknown(j, "train",
                 {"max_lr", "warmup_steps", "total_steps", "final_lr_fraction", "beta1", "beta2",
                  "adam_eps", "weight_decay", "clip_norm", "batch_size", "grad_accum", "lambda_alm",
                  "lambda_ap", "lambda_glm", "max_epochs", "early_stop_train_loss", "shuffle",
                  "telemetry_scale", "log_every", "val_every", "val_batches", "checkpoint_every"});
  TrainConfig t;
  take(j, "max_lr", t.max_lr);
  take(j, "warmup_steps", t.warmup_steps);
  take(j, "total_steps", t.total_steps);
  take(j, "final_lr_fraction", t.final_lr_fraction);
  take(j, "beta1", t.beta1);
  take(j, "beta2", t.beta2);
  take(j, "adam_eps", t.adam_eps);
  take(j, "weight_decay", t.weight_decay);
  take(j, "clip_norm", t.clip_norm);
  take(j, "batch_size", t.batch_size);
  take(j, "grad_accum", t.grad_accum);
  take(j, "lambda_alm", t.lambda_alm);
  take(j, "lambda_ap", t.lambda_ap);
  take(j, "lambda_glm", t.lambda_glm);
  take(j, "max_epochs", t.max_epochs);
  take(j, "early_stop_train_loss", t.early_stop_train_loss);
  take(j, "shuffle", t.shuffle);
  take(j, "telemetry_scale", t.telemetry_scale);
  take(j, "log_every", t.log_every);
  take(j, "val_every", t.val_every);
  take(j, "val_batches", t.val_batches);
  take(j, "checkpoint_every", t.checkpoint_every);
  return t;
}

}  // namespace

std::string RunConfig::to_json() const {
  json j;
  j["model"] = model_to_json(model);
  j["train"] = train_to_json(train);
  j["data"] = json{{"corpus", data.corpus},
                   {"val_corpus", data.val_corpus},
                   {"tokenizer", data.tokenizer},
                   {"digit_split", data.digit_split}};
  j["generate"] = json{{"top_p", generate.top_p},
                       {"top_k", generate.top_k},
                       {"max_new_tokens", generate.max_new_tokens}};
  j["precision"] = precision;
  j["seed"] = seed;
  j["run_id"] = run_id;
  j["out_dir"] = out_dir;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("config is not valid json: ") + e.what());
  }
  reject_unknown(j, "",
                 {"model", "train", "data", "generate", "precision", "seed", "run_id", "out_dir"});
  RunConfig c;
  try {
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    if (j.contains("data")) {
      const json& d = j.at("data");
      reject_unknown(d, "data", {"corpus", "val_corpus", "tokenizer", "digit_split"});
      take(d, "corpus", c.data.corpus);
      take(d, "val_corpus", c.data.val_corpus);
      take(d, "tokenizer", c.data.tokenizer);
      take(d, "digit_split", c.data.digit_split);
    }
    if (j.contains("generate")) {
      const json& g = j.at("generate");
      reject_unknown(g, "generate", {"top_p", "top_k", "max_new_tokens"});
      take(g, "top_p", c.generate.top_p);
      take(g, "top_k", c.generate.top_k);
      take(g, "max_new_tokens", c.generate.max_new_tokens);
    }
    take(j, "precision", c.precision);
    take(j, "seed", c.seed);
    take(j, "run_id", c.run_id);
    take(j, "out_dir", c.out_dir);
  } catch (const json::exception& e) {
    throw config_error(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write config file: " + path);
  out << to_json() << "\n";
}

}  // namespace pldr
