#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "memaudit/attack.hpp"
#include "memaudit/classifier.hpp"
#include "memaudit/cli.hpp"
#include "memaudit/corpus.hpp"
#include "memaudit/error.hpp"
#include "memaudit/report.hpp"
#include "memaudit/text_metrics.hpp"

namespace py = pybind11;
using namespace memaudit;

namespace {

TokenizerMode mode_of(bool lowercase) {
  return lowercase ? TokenizerMode::whitespace_lowercased : TokenizerMode::whitespace;
}

py::object opt(const std::optional<double>& v) {
  return v ? py::cast(*v) : py::none();
}

}  // namespace

PYBIND11_MODULE(_memaudit, m) {
  m.doc() = "Text metrics, objective scoring, trigger classifier and CLI of memaudit.";

  // Translators run newest first, so the base class goes in first.
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());

  m.def("tokenize", [](const std::string& text, bool lowercase) {
    return tokenize(text, mode_of(lowercase)).tokens;
  }, py::arg("text"), py::arg("lowercase") = true);

  m.def("lcs_length", [](std::vector<std::string> a, std::vector<std::string> b) {
    return lcs_length(TokenSeq{std::move(a), TokenizerMode::whitespace},
                      TokenSeq{std::move(b), TokenizerMode::whitespace});
  }, py::arg("a"), py::arg("b"));

  m.def("rouge_l", [](const std::string& candidate, const std::string& reference) {
    return rouge_l(std::string_view(candidate), std::string_view(reference));
  }, py::arg("candidate"), py::arg("reference"));

  m.def("normalized_edit_distance", [](const std::string& a, const std::string& b) {
    return normalized_edit_distance(tokenize(a), tokenize(b));
  }, py::arg("a"), py::arg("b"));

  m.def("prefix_budget", &prefix_budget, py::arg("seq_len"));

  m.def("split_text", [](const std::string& text, int seq_len) {
    auto s = split_sample(RawDocument{"doc", "", text, {}}, seq_len);
    return py::make_tuple(s.prefix_text, s.suffix_text());
  }, py::arg("text"), py::arg("seq_len"));

  m.def("objective", &objective, py::arg("alpha"), py::arg("mem"), py::arg("lcs_p"));

  m.def("score_candidate", [](const std::string& prompt, const std::string& output,
                              const std::string& suffix, double alpha) {
    auto s = score_candidate(prompt, output, tokenize(suffix), alpha);
    py::dict d;
    d["mem"] = opt(s.mem);
    d["lcs_p"] = opt(s.lcs_p);
    d["objective"] = s.objective;
    return d;
  }, py::arg("prompt"), py::arg("output"), py::arg("suffix"), py::arg("alpha"));

  m.def("score_vector_stats", [](const std::vector<double>& x, const std::vector<double>& y) {
    auto s = score_vector_stats(x, y);
    py::dict d;
    d["cosine"] = opt(s.cosine);
    d["l2"] = s.l2;
    d["pearson"] = opt(s.pearson);
    return d;
  }, py::arg("x"), py::arg("y"));

  m.def("top_ngrams", [](const std::vector<std::string>& prompts, std::size_t n_min,
                         std::size_t n_max, std::size_t k) {
    std::vector<TokenSeq> seqs;
    for (const auto& p : prompts) seqs.push_back(tokenize(p));
    py::list out;
    for (const auto& g : top_ngrams(seqs, n_min, n_max, k))
      out.append(py::make_tuple(py::tuple(py::cast(g.ngram)), g.count));
    return out;
  }, py::arg("prompts"), py::arg("n_min") = 1, py::arg("n_max") = 5, py::arg("k") = 10);

  m.def("is_refusal", [](const std::string& text, std::optional<std::vector<std::string>> phrases) {
    RefusalDetector d(phrases ? *phrases : default_refusal_phrases());
    return d.is_refusal(text);
  }, py::arg("text"), py::arg("phrases") = py::none());

  py::class_<TriggerModel>(m, "TriggerModel")
      .def_static("load", &TriggerModel::load, py::arg("path"))
      .def("probability", [](const TriggerModel& t, const std::string& p) { return t.probability(p); })
      .def("predict", [](const TriggerModel& t, const std::string& p) {
        return std::string(to_string(t.predict(p).label));
      })
      .def_readonly("threshold", &TriggerModel::threshold)
      .def_property_readonly("dimension", [](const TriggerModel& t) { return t.features.dimension; });

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = run_cli(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs a memaudit subcommand; returns (exit_code, stdout, stderr).");
}
