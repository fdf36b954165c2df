#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pldr/errors.hpp"
#include "pldr/model.hpp"
#include "pldr/ops.hpp"

namespace pldr {

template <typename T>
struct DagLossResult {
  Tensor<T> value;  // mean over finite terms, meaningful only when !overflow
  bool overflow = false;
};

// DL = mean over matrices of |ln(tr(e^{M o M}) / d)|
template <typename T>
DagLossResult<T> dag_loss(const std::vector<Tensor<T>>& mats) {
  if (mats.empty()) throw input_error("dag_loss: empty collection");
  DagLossResult<T> out{Tensor<T>::scalar(T(0)), false};
  for (const auto& m : mats) {
    int d = m.rows();
    if (m.cols() != d) throw shape_error("dag_loss: matrix not square");
    Tensor<T> tr = expm_trace(mul(m, m));
    if (!std::isfinite(static_cast<double>(tr.item()))) {
      out.overflow = true;
      continue;
    }
    out.value = add(out.value, absolute(ln(scale(tr, T(1) / T(d)))));
  }
  out.value = scale(out.value, T(1) / T(mats.size()));
  return out;
}

// tape free DL in double precision; +inf when any trace overflows
template <typename T>
double dag_value(const std::vector<Tensor<T>>& mats) {
  if (mats.empty()) throw input_error("dag_value: empty collection");
  Tape<T>* saved = Tape<T>::active();
  Tape<T>::active() = nullptr;
  double acc = 0.0;
  bool overflow = false;
  for (const auto& m : mats) {
    int d = m.rows();
    if (m.cols() != d) throw shape_error("dag_value: matrix not square");
    double tr = static_cast<double>(expm_trace(mul(m, m)).item());
    if (!std::isfinite(tr)) {
      overflow = true;
      break;
    }
    acc += std::fabs(std::log(tr / d));
  }
  Tape<T>::active() = saved;
  if (overflow) return std::numeric_limits<double>::infinity();
  return acc / static_cast<double>(mats.size());
}

template <typename T>
struct DeductiveCollections {
  std::vector<Tensor<T>> alm, ap, glm;
};

template <typename T>
void collect_deductive(const Deductive<T>& ded, DeductiveCollections<T>& out) {
  for (const auto& layer : ded)
    for (const auto& head : layer) {
      out.alm.push_back(head.alm);
      out.ap.push_back(head.ap);
      out.glm.push_back(head.glm);
    }
}

// lambda <= 0 means the term is off and is not evaluated at all
template <typename T>
Tensor<T> dag_regularizer(const DeductiveCollections<T>& c, double l1, double l2, double l3) {
  Tensor<T> total = Tensor<T>::scalar(T(0));
  auto accumulate = [&total](const std::vector<Tensor<T>>& mats, double lambda,
                             const char* tag) {
    if (lambda <= 0.0) return;
    DagLossResult<T> r = dag_loss(mats);
    if (r.overflow)
      throw dag_overflow_error(std::string("dag regularizer overflow on ") + tag);
    total = add(total, scale(r.value, T(lambda)));
  };
  accumulate(c.alm, l1, "A_LM");
  accumulate(c.ap, l2, "A_P");
  accumulate(c.glm, l3, "G_LM");
  return total;
}

struct DagValue {
  std::string tensor;
  bool has_lambda = true;  // false renders NA in the lambda column
  double lambda = 0.0;
  bool has_value = true;  // false renders NA
  double value = 0.0;     // +inf renders "overflow"
};

struct DagReport {
  std::string model_id;
  std::vector<DagValue> rows;  // A_LM, A_P, G_LM, DLR
};

std::string dag_report_csv(const DagReport& report);
DagReport dag_report_from_csv(const std::string& csv);
void save_dag_report(const std::string& path, const DagReport& report);
DagReport load_dag_report(const std::string& path);
std::string dag_report_table(const DagReport& report);  // Table 2 shaped single row

// Single forward pass over a completed sequence; DL per deductive tensor over
// all layers and heads, DLR aggregates the regularized deductive terms
// (lambda2, lambda3) and is NA when both are off.
template <typename T>
DagReport dag_report_for_sequence(const Model<T>& model, const std::vector<int>& ids,
                                  const std::string& model_id, double l1, double l2,
                                  double l3) {
  if (ids.empty()) throw input_error("dag_report_for_sequence: empty sequence");
  Tape<T>* saved = Tape<T>::active();
  Tape<T>::active() = nullptr;
  SampleResult<T> res = model.forward(ids);
  Tape<T>::active() = saved;
  DeductiveCollections<T> c;
  collect_deductive(res.deductive, c);
  double dl_alm = dag_value(c.alm);
  double dl_ap = dag_value(c.ap);
  double dl_glm = dag_value(c.glm);
  DagReport rep;
  rep.model_id = model_id;
  rep.rows.push_back({"A_LM", l1 > 0.0, l1, true, dl_alm});
  rep.rows.push_back({"A_P", l2 > 0.0, l2, true, dl_ap});
  rep.rows.push_back({"G_LM", l3 > 0.0, l3, true, dl_glm});
  DagValue dlr{"DLR", false, 0.0, true, 0.0};
  if (l2 <= 0.0 && l3 <= 0.0) {
    dlr.has_value = false;
  } else {
    double v = 0.0;
    if (l2 > 0.0) v += l2 * dl_ap;
    if (l3 > 0.0) v += l3 * dl_glm;
    dlr.value = v;
  }
  rep.rows.push_back(dlr);
  return rep;
}

}  // namespace pldr
