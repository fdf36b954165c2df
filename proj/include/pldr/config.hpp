#pragma once

#include <optional>
#include <string>

#include "pldr/errors.hpp"

namespace pldr {

struct ModelConfig {
  std::string flavor = "v5";  // v5 or v9
  int vocab_size = 32000;
  int d_model = 768;
  int n_layers = 7;
  int n_heads = 12;
  int context_length = 1024;
  int residual_units = 8;
  int metric_gated_size = 170;
  int metric_linear_size = 64;
  double rope_base = 10000.0;
  double ln_eps = 1e-5;
  double power_floor = 1e-12;
  int pad_id = 0;
  int end_id = 1;

  int d_k() const { return d_model / n_heads; }
  int ffn_gated_size() const { return (2 * 4 * d_model) / 3; }
  void validate() const;
};

struct TrainConfig {
  double max_lr = 4e-4;
  int warmup_steps = 2000;
  int total_steps = 250000;
  double final_lr_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-5;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  int batch_size = 16;
  int grad_accum = 1;  // 2 mirrors the two-rank global batch of 32
  double lambda_alm = 0.0;  // 0 means the term is off
  double lambda_ap = 0.0;
  double lambda_glm = 0.0;
  int max_epochs = 1;  // 0 cycles the corpus until total_steps
  double early_stop_train_loss = 0.0;  // 0 disables
  bool shuffle = false;
  double telemetry_scale = 1.0;
  int log_every = 2000;
  int val_every = 12000;
  int val_batches = 2000;
  int checkpoint_every = 0;  // 0 means final only
  void validate() const;

  int scaled(int cadence) const {
    int v = static_cast<int>(cadence * telemetry_scale);
    return v < 1 ? 1 : v;
  }
};

struct DataConfig {
  std::string corpus;
  std::string val_corpus;
  std::string tokenizer = "byte";  // "byte" or path to a unigram vocab file
  bool digit_split = true;
};

struct GenerationParams {
  double top_p = 0.0;  // 0 disables nucleus
  int top_k = 0;       // 0 disables top-k; 1 is greedy
  int max_new_tokens = 256;
  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  GenerationParams generate;
  std::string precision = "f32";  // f32 or f64
  uint64_t seed = 1234;
  std::string run_id = "run";
  std::string out_dir = "out";

  void validate() const;
  std::string to_json() const;                     // canonical (sorted keys)
  static RunConfig from_json(const std::string&);  // rejects unknown keys by name
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace pldr
