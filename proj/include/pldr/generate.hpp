#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pldr/config.hpp"
#include "pldr/dag.hpp"
#include "pldr/model.hpp"
#include "pldr/rng.hpp"

namespace pldr {

// softmax at temperature 1 over a logits row, computed in double
template <typename T>
std::vector<double> row_probabilities(const Tensor<T>& logits, int row) {
  int v = logits.cols();
  const T* r = logits.data() + static_cast<size_t>(row) * v;
  double mx = static_cast<double>(r[0]);
  for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(r[j]));
  std::vector<double> p(static_cast<size_t>(v));
  double z = 0.0;
  for (int j = 0; j < v; ++j) {
    p[static_cast<size_t>(j)] = std::exp(static_cast<double>(r[j]) - mx);
    z += p[static_cast<size_t>(j)];
  }
  for (double& x : p) x /= z;
  return p;
}

// ids of the nucleus: smallest prefix of the descending distribution whose
// cumulative mass reaches p (ties broken by id for determinism)
inline std::vector<int> nucleus_ids(const std::vector<double>& probs, double top_p) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    double pa = probs[static_cast<size_t>(a)], pb = probs[static_cast<size_t>(b)];
    return pa != pb ? pa > pb : a < b;
  });
  std::vector<int> keep;
  double cum = 0.0;
  for (int id : order) {
    keep.push_back(id);
    cum += probs[static_cast<size_t>(id)];
    if (cum >= top_p) break;
  }
  return keep;
}

// greedy when both parameters are off; top_k filters first, then top_p
inline int pick_token(const std::vector<double>& probs, const GenerationParams& gp, Rng& rng) {
  if (gp.top_p <= 0.0 && gp.top_k <= 1) {
    int best = 0;
    for (size_t j = 1; j < probs.size(); ++j)
      if (probs[j] > probs[static_cast<size_t>(best)]) best = static_cast<int>(j);
    return best;
  }
  std::vector<int> keep;
  if (gp.top_k > 1) {
    keep = nucleus_ids(probs, 1.1);  // full descending order
    keep.resize(std::min(keep.size(), static_cast<size_t>(gp.top_k)));
  } else {
    keep.assign(probs.size(), 0);
    std::iota(keep.begin(), keep.end(), 0);
  }
  if (gp.top_p > 0.0 && gp.top_p < 1.0) {
    std::vector<double> sub(probs.size(), 0.0);
    double z = 0.0;
    for (int id : keep) z += probs[static_cast<size_t>(id)];
    for (int id : keep) sub[static_cast<size_t>(id)] = probs[static_cast<size_t>(id)] / z;
    keep = nucleus_ids(sub, gp.top_p);
  }
  double z = 0.0;
  for (int id : keep) z += probs[static_cast<size_t>(id)];
  double u = rng.next_double() * z;
  double cum = 0.0;
  for (int id : keep) {
    cum += probs[static_cast<size_t>(id)];
    if (u < cum) return id;
  }
  return keep.back();
}

struct GenerationResult {
  std::vector<int> continuation;  // generated ids, end token excluded
  bool hit_end = false;
  bool context_overflow = false;  // decoding slid past context_length
};

// full prefix recompute per step; the window slides once the sequence would
// exceed the model context
template <typename T>
GenerationResult generate(const Model<T>& model, const std::vector<int>& prompt,
                          const GenerationParams& gp, Rng& rng) {
  if (prompt.empty()) throw input_error("generate: empty prompt");
  if (gp.top_p < 0.0 || gp.top_p > 1.0)
    throw config_error("generate.top_p must lie in (0, 1]");
  Tape<T>* saved = Tape<T>::active();
  Tape<T>::active() = nullptr;
  int ctx = model.config().context_length;
  std::vector<int> seq = prompt;
  GenerationResult out;
  if (static_cast<int>(seq.size()) > ctx) {
    seq.erase(seq.begin(), seq.end() - ctx);
    out.context_overflow = true;
  }
  for (int i = 0; i < gp.max_new_tokens; ++i) {
    SampleResult<T> res = model.forward(seq);
    std::vector<double> probs = row_probabilities(res.logits, res.logits.rows() - 1);
    int id = pick_token(probs, gp, rng);
    if (id == model.config().end_id) {
      out.hit_end = true;
      break;
    }
    out.continuation.push_back(id);
    seq.push_back(id);
    if (static_cast<int>(seq.size()) > ctx) {
      seq.erase(seq.begin());
      out.context_overflow = true;
    }
  }
  Tape<T>::active() = saved;
  return out;
}

// greedy decode of n_gen tokens, then one forward pass over the completed
// sequence feeding the DL report
template <typename T>
DagReport dag_inference_report(const Model<T>& model, const std::vector<int>& prompt,
                               int n_gen, const std::string& model_id, double l1, double l2,
                               double l3) {
  GenerationParams gp;
  gp.top_k = 1;
  gp.max_new_tokens = n_gen;
  Rng rng(0);
  GenerationResult g = generate(model, prompt, gp, rng);
  std::vector<int> seq = prompt;
  seq.insert(seq.end(), g.continuation.begin(), g.continuation.end());
  int ctx = model.config().context_length;
  if (static_cast<int>(seq.size()) > ctx)
    seq.erase(seq.begin(), seq.end() - ctx);
  return dag_report_for_sequence(model, seq, model_id, l1, l2, l3);
}

}  // namespace pldr
