#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "pldr/dag.hpp"
#include "pldr/generate.hpp"
#include "pldr/model.hpp"
#include "pldr/pack.hpp"
#include "pldr/tokenizer.hpp"
#include "pldr/train.hpp"

namespace py = pybind11;
using namespace pldr;
using Td = Tensor<double>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

Td to_tensor(const DoubleArray& a) {
  if (a.ndim() != 2) throw input_error("expected a 2d array");
  Td t({static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))});
  std::memcpy(t.data(), a.data(), sizeof(double) * t.size());
  return t;
}

py::array_t<double> to_array(const Td& t) {
  py::array_t<double> a({t.rows(), t.cols()});
  std::memcpy(a.mutable_data(), t.data(), sizeof(double) * t.size());
  return a;
}

// inference wrapper over the 64 bit model
class PyModel {
 public:
  explicit PyModel(const std::string& config_json)
      : cfg_(RunConfig::from_json(config_json)), model_(cfg_.model, cfg_.seed) {}

  py::array_t<double> forward(const std::vector<int>& ids) const {
    return to_array(model_.forward(ids).logits);
  }

  py::dict deductive(const std::vector<int>& ids) const {
    SampleResult<double> res = model_.forward(ids);
    py::list alm, ap, glm;
    for (const auto& layer : res.deductive) {
      py::list la, lp, lg;
      for (const auto& head : layer) {
        la.append(to_array(head.alm));
        lp.append(to_array(head.ap));
        lg.append(to_array(head.glm));
      }
      alm.append(la);
      ap.append(lp);
      glm.append(lg);
    }
    py::dict out;
    out["alm"] = alm;
    out["ap"] = ap;
    out["glm"] = glm;
    return out;
  }

  py::tuple generate_tokens(const std::vector<int>& prompt, double top_p, int top_k,
                            int max_new_tokens, uint64_t seed) const {
    GenerationParams gp;
    gp.top_p = top_p;
    gp.top_k = top_k;
    gp.max_new_tokens = max_new_tokens;
    Rng rng(seed);
    GenerationResult res = generate(model_, prompt, gp, rng);
    return py::make_tuple(res.continuation, res.hit_end, res.context_overflow);
  }

  std::string dag_report_csv_for(const std::vector<int>& ids, double l1, double l2,
                                 double l3) const {
    return dag_report_csv(
        dag_report_for_sequence(model_, ids, cfg_.run_id, l1, l2, l3));
  }

  int64_t n_params() const { return param_count(cfg_.model); }
  std::string config_json() const { return cfg_.to_json(); }

 private:
  RunConfig cfg_;
  Model<double> model_;
};

}  // namespace

PYBIND11_MODULE(pldr, m) {
  m.doc() = "power law graph attention language model kernels";

  py::register_exception<config_error>(m, "ConfigError");
  py::register_exception<input_error>(m, "InputError");

  py::class_<Tokenizer>(m, "Tokenizer")
      .def(py::init([](const std::string& spec, bool digit_split) {
             return Tokenizer::from_spec(spec, digit_split);
           }),
           py::arg("spec") = "byte", py::arg("digit_split") = true)
      .def("encode", &Tokenizer::encode, py::arg("text"))
      .def("decode", &Tokenizer::decode, py::arg("ids"))
      .def_property_readonly("vocab_size", &Tokenizer::vocab_size)
      .def_property_readonly("pad_id", &Tokenizer::pad_id)
      .def_property_readonly("end_id", &Tokenizer::end_id);

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("config_json"))
      .def("forward", &PyModel::forward, py::arg("ids"))
      .def("deductive", &PyModel::deductive, py::arg("ids"))
      .def("generate", &PyModel::generate_tokens, py::arg("prompt"), py::arg("top_p") = 0.0,
           py::arg("top_k") = 0, py::arg("max_new_tokens") = 64, py::arg("seed") = 0)
      .def("dag_report_csv", &PyModel::dag_report_csv_for, py::arg("ids"),
           py::arg("lambda_alm") = 0.0, py::arg("lambda_ap") = 0.0, py::arg("lambda_glm") = 0.0)
      .def_property_readonly("n_params", &PyModel::n_params)
      .def_property_readonly("config_json", &PyModel::config_json);

  m.def(
      "expm_trace",
      [](const DoubleArray& a) {
        return static_cast<double>(expm_trace(to_tensor(a)).item());
      },
      py::arg("m"), "trace of the matrix exponential");

  m.def(
      "dag_value",
      [](const std::vector<DoubleArray>& mats) {
        std::vector<Td> ts;
        ts.reserve(mats.size());
        for (const auto& a : mats) ts.push_back(to_tensor(a));
        return dag_value(ts);
      },
      py::arg("mats"), "mean |ln(tr(e^{M o M})/d)|, +inf on overflow");

  m.def(
      "lr_schedule",
      [](double max_lr, int warmup_steps, int total_steps, double final_lr_fraction, int step) {
        TrainConfig tc;
        tc.max_lr = max_lr;
        tc.warmup_steps = warmup_steps;
        tc.total_steps = total_steps;
        tc.final_lr_fraction = final_lr_fraction;
        return lr_schedule(tc, step);
      },
      py::arg("max_lr"), py::arg("warmup_steps"), py::arg("total_steps"),
      py::arg("final_lr_fraction"), py::arg("step"));

  m.def(
      "param_count",
      [](const std::string& config_json) {
        return param_count(RunConfig::from_json(config_json).model);
      },
      py::arg("config_json"));

  m.def(
      "pack_documents",
      [](const std::vector<std::string>& docs, const Tokenizer& tok, int context_length) {
        std::vector<PackedChunk> chunks = pack_documents(docs, tok, context_length);
        py::list out;
        for (const auto& c : chunks) out.append(py::make_tuple(c.ids, c.pad_start));
        return out;
      },
      py::arg("docs"), py::arg("tokenizer"), py::arg("context_length"));
}
