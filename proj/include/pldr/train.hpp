#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pldr/checkpoint.hpp"
#include "pldr/config.hpp"
#include "pldr/dag.hpp"
#include "pldr/model.hpp"
#include "pldr/pack.hpp"
#include "pldr/telemetry.hpp"

namespace pldr {

// linear warmup to max_lr, then cosine decay to final_lr_fraction * max_lr
inline double lr_schedule(const TrainConfig& tc, int64_t step) {
  if (step < 0) step = 0;
  if (step > tc.total_steps) step = tc.total_steps;
  if (step < tc.warmup_steps)
    return tc.max_lr * static_cast<double>(step) / static_cast<double>(tc.warmup_steps);
  double t = static_cast<double>(step - tc.warmup_steps) /
             static_cast<double>(tc.total_steps - tc.warmup_steps);
  double f = tc.final_lr_fraction;
  return tc.max_lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(M_PI * t)));
}

// mean negative log likelihood over rows whose target is not pad_id
template <typename T>
Tensor<T> lm_cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                           int pad_id) {
  int64_t count = 0;
  for (int t : targets) count += t != pad_id;
  if (count == 0) throw input_error("lm_cross_entropy: every target is padding");
  return scale(ce_sum(logits, targets, pad_id), T(1) / T(count));
}

// decoupled AdamW with global norm clipping; all accumulators live at the
// model precision so a checkpoint round trip is exact
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<ParamRef<T>> params, const TrainConfig& tc)
      : params_(std::move(params)), cfg_(tc) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.size(), T(0));
      v_.emplace_back(p.tensor.size(), T(0));
    }
  }

  // applies one update at lr; returns false and leaves parameters untouched
  // when the global gradient norm is non finite
  bool step(double lr) {
    double sq = 0.0;
    for (const auto& p : params_) {
      const auto& g = p.tensor.grad();
      for (T gv : g) sq += static_cast<double>(gv) * static_cast<double>(gv);
    }
    if (!std::isfinite(sq)) return false;
    double norm = std::sqrt(sq);
    last_grad_norm_ = norm;
    double cs = norm > cfg_.clip_norm && norm > 0.0 ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      const auto& p = params_[pi];
      double wd = p.decay ? cfg_.weight_decay : 0.0;
      auto& vals = p.tensor.values();
      const auto& grads = p.tensor.grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (size_t i = 0; i < vals.size(); ++i) {
        double g = static_cast<double>(grads[i]) * cs;
        double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * g;
        double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * g * g;
        m[i] = T(mi);
        v[i] = T(vi);
        double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.adam_eps);
        vals[i] = T(static_cast<double>(vals[i]) -
                    lr * (update + wd * static_cast<double>(vals[i])));
      }
    }
    return true;
  }

  void zero_grads() {
    for (const auto& p : params_) p.tensor.zero_grad();
  }

  double last_grad_norm() const { return last_grad_norm_; }
  int64_t updates() const { return t_; }
  void set_updates(int64_t t) { t_ = t; }
  const std::vector<ParamRef<T>>& params() const { return params_; }
  std::vector<T>& moment1(size_t i) { return m_[i]; }
  std::vector<T>& moment2(size_t i) { return v_[i]; }

 private:
  std::vector<ParamRef<T>> params_;
  TrainConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  int64_t t_ = 0;
  double last_grad_norm_ = 0.0;
};

template <typename T>
struct ChunkForward {
  Tensor<T> ce;  // summed over targets
  int64_t correct = 0;
  int64_t total = 0;
  Deductive<T> deductive;
};

// inputs are the first p-1 real tokens and targets the ids shifted by one,
// so a padded chunk is the same computation as its truncated form
template <typename T>
ChunkForward<T> chunk_forward(const Model<T>& model, const PackedChunk& chunk) {
  int n = static_cast<int>(chunk.ids.size());
  int p = std::min(chunk.pad_start, n);
  if (p < 2) throw input_error("chunk_forward: chunk needs at least two real tokens");
  int in_len = p - 1;
  std::vector<int> inputs(chunk.ids.begin(), chunk.ids.begin() + in_len);
  std::vector<int> targets(chunk.ids.begin() + 1, chunk.ids.begin() + p);
  SampleResult<T> res = model.forward(inputs, in_len);
  ChunkForward<T> out;
  out.ce = ce_sum(res.logits, targets, model.config().pad_id);
  auto [c, t] = correct_and_total(res.logits, targets, model.config().pad_id);
  out.correct = c;
  out.total = t;
  out.deductive = std::move(res.deductive);
  return out;
}

struct EvalResult {
  double loss = 0.0;
  double acc = 0.0;
  int64_t total = 0;
};

// total sum over total count, so the result does not depend on batching
template <typename T>
EvalResult evaluate(const Model<T>& model, const std::vector<PackedChunk>& chunks,
                    int max_chunks) {
  Tape<T>* saved = Tape<T>::active();
  Tape<T>::active() = nullptr;
  double ce = 0.0;
  int64_t correct = 0, total = 0;
  int limit = max_chunks > 0 && max_chunks < static_cast<int>(chunks.size())
                  ? max_chunks
                  : static_cast<int>(chunks.size());
  for (int i = 0; i < limit; ++i) {
    const PackedChunk& c = chunks[static_cast<size_t>(i)];
    if (c.pad_start < 2) continue;
    ChunkForward<T> f = chunk_forward(model, c);
    ce += static_cast<double>(f.ce.item());
    correct += f.correct;
    total += f.total;
  }
  Tape<T>::active() = saved;
  EvalResult r;
  r.total = total;
  if (total > 0) {
    r.loss = ce / static_cast<double>(total);
    r.acc = static_cast<double>(correct) / static_cast<double>(total);
  }
  return r;
}

template <typename T>
CheckpointData make_checkpoint(AdamW<T>& opt, const RunConfig& cfg, int64_t step, int epoch,
                               uint64_t rng_state,
                               const std::deque<std::pair<double, double>>& window) {
  CheckpointData data;
  data.dtype_size = sizeof(T);
  data.config_json = cfg.to_json();
  const auto& params = opt.params();
  for (const auto& p : params)
    data.arrays.push_back({"param." + p.name, p.tensor.shape(),
                           std::vector<double>(p.tensor.values().begin(),
                                               p.tensor.values().end())});
  for (size_t i = 0; i < params.size(); ++i)
    data.arrays.push_back({"adam_m." + params[i].name, params[i].tensor.shape(),
                           std::vector<double>(opt.moment1(i).begin(), opt.moment1(i).end())});
  for (size_t i = 0; i < params.size(); ++i)
    data.arrays.push_back({"adam_v." + params[i].name, params[i].tensor.shape(),
                           std::vector<double>(opt.moment2(i).begin(), opt.moment2(i).end())});
  data.arrays.push_back({"adam_t", {1}, {static_cast<double>(opt.updates())}});
  data.step = static_cast<uint64_t>(step);
  data.epoch = epoch;
  data.rng_state = rng_state;
  for (const auto& [l, a] : window) {
    data.loss_window.push_back(l);
    data.loss_window.push_back(a);
  }
  return data;
}

template <typename T>
void load_array_into(const NamedArray& a, const Tensor<T>& t) {
  if (a.shape != t.shape())
    throw io_error("checkpoint array " + a.name + " has shape " + shape_str(a.shape) +
                   ", expected " + shape_str(t.shape()));
  auto& vals = t.values();
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = T(a.data[i]);
}

template <typename T>
void load_array_into_vector(const NamedArray& a, std::vector<T>& out) {
  if (a.data.size() != out.size())
    throw io_error("checkpoint array " + a.name + " has " + std::to_string(a.data.size()) +
                   " values, expected " + std::to_string(out.size()));
  for (size_t i = 0; i < out.size(); ++i) out[i] = T(a.data[i]);
}

struct RestoredState {
  int64_t step = 0;
  int epoch = 0;
  uint64_t rng_state = 0;
  std::deque<std::pair<double, double>> window;
};

// pass opt = nullptr to restore parameters only (inference paths)
template <typename T>
RestoredState restore_checkpoint(const CheckpointData& data, const Model<T>& model,
                                 AdamW<T>* opt, const RunConfig& cfg) {
  check_checkpoint_config(data, cfg.to_json(), sizeof(T));
  for (const auto& p : model.params())
    load_array_into(find_array(data, "param." + p.name), p.tensor);
  if (opt) {
    const auto& opt_params = opt->params();
    for (size_t i = 0; i < opt_params.size(); ++i) {
      load_array_into_vector(find_array(data, "adam_m." + opt_params[i].name),
                             opt->moment1(i));
      load_array_into_vector(find_array(data, "adam_v." + opt_params[i].name),
                             opt->moment2(i));
    }
    opt->set_updates(static_cast<int64_t>(find_array(data, "adam_t").data.at(0)));
  }
  RestoredState st;
  st.step = static_cast<int64_t>(data.step);
  st.epoch = data.epoch;
  st.rng_state = data.rng_state;
  for (size_t i = 0; i + 1 < data.loss_window.size(); i += 2)
    st.window.emplace_back(data.loss_window[i], data.loss_window[i + 1]);
  return st;
}

struct TrainResult {
  int64_t step = 0;
  int epoch = 0;
  double train_loss = 0.0;  // running mean at exit
  double train_acc = 0.0;
  int rejected_steps = 0;
  bool early_stopped = false;
  std::string checkpoint_path;
  std::vector<double> step_losses;  // per step total loss, +inf for rejected steps
};

namespace detail {

inline int batches_per_epoch(int n_chunks, int batch_size) {
  return (n_chunks + batch_size - 1) / batch_size;
}

inline int steps_per_epoch(int n_chunks, int batch_size, int grad_accum) {
  int nb = batches_per_epoch(n_chunks, batch_size);
  return (nb + grad_accum - 1) / grad_accum;
}

}  // namespace detail

// single process training; the two rank setup of the reference run maps to
// grad_accum micro batches per optimizer step. The data cursor is a pure
// function of the step count, which is what makes resume exact.
template <typename T>
TrainResult train_loop(Model<T>& model, const RunConfig& cfg,
                       const std::vector<PackedChunk>& train_chunks,
                       const std::vector<PackedChunk>& val_chunks,
                       const CheckpointData* resume = nullptr,
                       TelemetryWriter* telemetry = nullptr, bool collect_losses = false) {
  if (train_chunks.empty()) throw input_error("train_loop: no training chunks");
  const TrainConfig& tc = cfg.train;
  AdamW<T> opt(model.params(), tc);
  int64_t step = 0;
  Rng trainer_rng(cfg.seed);
  std::deque<std::pair<double, double>> window;
  if (resume) {
    RestoredState st = restore_checkpoint(*resume, model, &opt, cfg);
    step = st.step;
    trainer_rng.set_state(st.rng_state);
    window = std::move(st.window);
  }

  int n_chunks = static_cast<int>(train_chunks.size());
  int spe = detail::steps_per_epoch(n_chunks, tc.batch_size, tc.grad_accum);
  size_t window_cap = static_cast<size_t>(std::min(100, tc.scaled(tc.log_every)));
  int log_every = tc.scaled(tc.log_every);
  int val_every = tc.scaled(tc.val_every);
  int val_chunk_budget = tc.scaled(tc.val_batches) * tc.batch_size;

  TrainResult result;
  double win_loss = 0.0, win_acc = 0.0;
  for (const auto& [l, a] : window) {
    win_loss += l;
    win_acc += a;
  }
  bool dag_on = tc.lambda_alm > 0 || tc.lambda_ap > 0 || tc.lambda_glm > 0;

  auto emit_checkpoint = [&](int64_t at_step, int at_epoch, bool final) {
    std::filesystem::create_directories(cfg.out_dir);
    std::string path = cfg.out_dir + "/" + cfg.run_id +
                       (final ? "" : "_step" + std::to_string(at_step)) + ".ckpt";
    save_checkpoint(path,
                    make_checkpoint(opt, cfg, at_step, at_epoch, trainer_rng.state(), window));
    if (final) result.checkpoint_path = path;
  };

  while (step < tc.total_steps) {
    int epoch = static_cast<int>(step / spe);
    if (tc.max_epochs > 0 && epoch >= tc.max_epochs) break;
    int group = static_cast<int>(step % spe);
    std::vector<int> order = epoch_order(n_chunks, tc.shuffle, cfg.seed, epoch);

    int first_batch = group * tc.grad_accum;
    int nb = detail::batches_per_epoch(n_chunks, tc.batch_size);
    int micro_count = std::min(tc.grad_accum, nb - first_batch);

    opt.zero_grads();
    double step_ce = 0.0;
    int64_t step_correct = 0, step_total = 0;
    double step_dlr = 0.0;
    bool rejected = false;
    DeductiveCollections<T> last_ded;
    for (int micro = 0; micro < micro_count && !rejected; ++micro) {
      int b = first_batch + micro;
      int lo = b * tc.batch_size;
      int hi = std::min(lo + tc.batch_size, n_chunks);
      typename Tape<T>::Scope scope;
      Tensor<T> ce_total = Tensor<T>::scalar(T(0));
      int64_t count = 0;
      DeductiveCollections<T> ded;
      for (int ci = lo; ci < hi; ++ci) {
        const PackedChunk& chunk =
            train_chunks[static_cast<size_t>(order[static_cast<size_t>(ci)])];
        if (chunk.pad_start < 2) continue;
        ChunkForward<T> f = chunk_forward(model, chunk);
        ce_total = add(ce_total, f.ce);
        count += f.total;
        step_correct += f.correct;
        step_total += f.total;
        collect_deductive(f.deductive, ded);
      }
      if (count == 0) continue;
      Tensor<T> loss = scale(ce_total, T(1) / T(count));
      step_ce += static_cast<double>(loss.item());
      if (dag_on) {
        try {
          Tensor<T> reg = dag_regularizer(ded, tc.lambda_alm, tc.lambda_ap, tc.lambda_glm);
          step_dlr += static_cast<double>(reg.item());
          loss = add(loss, reg);
        } catch (const dag_overflow_error&) {
          rejected = true;
          break;
        }
      }
      scope.tape.backward(scale(loss, T(1) / T(micro_count)));
      last_ded = std::move(ded);
    }

    double lr = lr_schedule(tc, step + 1);
    if (!rejected) rejected = !opt.step(lr);
    ++step;
    if (rejected) {
      ++result.rejected_steps;
      if (collect_losses)
        result.step_losses.push_back(std::numeric_limits<double>::infinity());
    } else {
      double loss_v = (step_ce + step_dlr) / micro_count;
      double acc_v = step_total > 0
                         ? static_cast<double>(step_correct) / static_cast<double>(step_total)
                         : 0.0;
      window.emplace_back(loss_v, acc_v);
      win_loss += loss_v;
      win_acc += acc_v;
      if (window.size() > window_cap) {
        win_loss -= window.front().first;
        win_acc -= window.front().second;
        window.pop_front();
      }
      if (collect_losses) result.step_losses.push_back(loss_v);
    }

    if (telemetry && (step % log_every == 0 || step >= tc.total_steps)) {
      TelemetryRecord rec;
      rec.step = step;
      rec.epoch = static_cast<int>((step - 1) / spe);
      rec.lr = lr;
      rec.train_loss = window.empty() ? 0.0 : win_loss / static_cast<double>(window.size());
      rec.train_acc = window.empty() ? 0.0 : win_acc / static_cast<double>(window.size());
      double dl_alm = last_ded.alm.empty() ? 0.0 : dag_value(last_ded.alm);
      double dl_ap = last_ded.ap.empty() ? 0.0 : dag_value(last_ded.ap);
      double dl_glm = last_ded.glm.empty() ? 0.0 : dag_value(last_ded.glm);
      rec.dl_alm = dl_alm;
      rec.dl_ap = dl_ap;
      rec.dl_glm = dl_glm;
      rec.has_dlr = tc.lambda_ap > 0 || tc.lambda_glm > 0;
      if (rec.has_dlr)
        rec.dlr = (tc.lambda_ap > 0 ? tc.lambda_ap * dl_ap : 0.0) +
                  (tc.lambda_glm > 0 ? tc.lambda_glm * dl_glm : 0.0);
      rec.overflow_flags = (std::isinf(dl_alm) ? 1 : 0) | (std::isinf(dl_ap) ? 2 : 0) |
                           (std::isinf(dl_glm) ? 4 : 0);
      if (!val_chunks.empty() && step % val_every == 0) {
        EvalResult ev = evaluate(model, val_chunks, val_chunk_budget);
        rec.has_val = true;
        rec.val_loss = ev.loss;
        rec.val_acc = ev.acc;
      }
      telemetry->log(rec);
    }

    if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 && step < tc.total_steps)
      emit_checkpoint(step, static_cast<int>(step / spe), false);

    if (tc.early_stop_train_loss > 0 && window.size() == window_cap &&
        win_loss / static_cast<double>(window.size()) < tc.early_stop_train_loss) {
      result.early_stopped = true;
      break;
    }
  }

  result.step = step;
  result.epoch = static_cast<int>(step / spe);
  result.train_loss = window.empty() ? 0.0 : win_loss / static_cast<double>(window.size());
  result.train_acc = window.empty() ? 0.0 : win_acc / static_cast<double>(window.size());
  emit_checkpoint(step, result.epoch, true);
  return result;
}

}  // namespace pldr
