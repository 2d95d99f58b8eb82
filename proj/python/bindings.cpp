#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gic/ctc.hpp"
#include "gic/data.hpp"
#include "gic/model.hpp"
#include "gic/ngram.hpp"
#include "gic/runconfig.hpp"
#include "gic/train.hpp"

namespace py = pybind11;
using namespace gic;

namespace {

using Rows = std::vector<std::vector<double>>;

Matrix to_matrix(const Rows& rows) {
  if (rows.empty()) return Matrix(0, 0);
  const int cols = static_cast<int>(rows.front().size());
  Matrix m(static_cast<int>(rows.size()), cols);
  for (size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int>(rows[r].size()) != cols)
      throw ShapeError("ragged row in matrix input");
    for (int c = 0; c < cols; ++c) m.at(static_cast<int>(r), c) = rows[r][c];
  }
  return m;
}

Rows from_matrix(const Matrix& m) {
  Rows rows(m.rows, std::vector<double>(m.cols));
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) rows[r][c] = m.at(r, c);
  return rows;
}

// GicModel plus the checkpoint vocabulary when loaded from disk.
class PyModel {
 public:
  PyModel(const std::string& config_json, uint64_t seed)
      : model_(config_from_json(config_json), seed) {}
  explicit PyModel(GicModel m, std::vector<std::string> vocab)
      : model_(std::move(m)), vocab_(std::move(vocab)) {}
  // The parameter store is single-owner; returning by value must move.
  PyModel(PyModel&&) = default;
  PyModel(const PyModel&) = delete;

  static PyModel load(const std::string& path) {
    CheckpointData ck = load_checkpoint(path);
    std::vector<std::string> tokens;
    for (int i = 0; i < ck.vocab.size(); ++i) tokens.push_back(ck.vocab.token(i));
    return PyModel(model_from_checkpoint(ck), std::move(tokens));
  }

  std::string config_json() const { return config_to_json(model_.config()); }
  std::vector<std::string> vocab() const { return vocab_; }
  std::vector<int> tap_layers() const { return model_.tap_layers(); }

  std::vector<int> greedy(const Rows& features) const {
    return model_.greedy(to_matrix(features));
  }

  py::dict forward(const Rows& features, const std::optional<std::vector<int>>& labels) const {
    Matrix feats = to_matrix(features);
    Tape tape;
    const std::vector<int>* lbl = labels ? &*labels : nullptr;
    ModelOutput out = model_.forward(tape, feats, feats.rows, lbl, FwdOpts{});
    py::dict d;
    d["valid"] = out.valid;
    d["final_posterior"] = from_matrix(out.final_posterior);
    d["feasible"] = out.feasible;
    std::vector<int> layers;
    std::vector<Rows> posts;
    std::vector<double> losses;
    for (const TapOutput& tp : out.taps) {
      layers.push_back(tp.layer);
      posts.push_back(from_matrix(tp.posterior));
      losses.push_back(tp.loss);
    }
    d["tap_layers"] = layers;
    d["tap_posteriors"] = posts;
    if (lbl) {
      d["loss"] = out.loss;
      d["final_loss"] = out.final_loss;
      d["tap_losses"] = losses;
    }
    return d;
  }

 private:
  GicModel model_;
  std::vector<std::string> vocab_;
};

py::dict synth_dataset(uint64_t seed, int n_utts, int vocab_size, int min_len, int max_len,
                       int frames_per_token, double noise_std, int d_feat) {
  SynthParams sp;
  sp.seed = seed;
  sp.n_utts = n_utts;
  sp.vocab_size = vocab_size;
  sp.min_len = min_len;
  sp.max_len = max_len;
  sp.frames_per_token = frames_per_token;
  sp.noise_std = noise_std;
  sp.d_feat = d_feat;
  Dataset ds = synth_generate(sp);
  py::dict d;
  std::vector<std::string> ids, tokens;
  std::vector<Rows> feats;
  std::vector<std::vector<int>> transcripts;
  for (const Utterance& u : ds.utts) {
    ids.push_back(u.id);
    feats.push_back(from_matrix(u.features));
    transcripts.push_back(u.transcript);
  }
  for (int i = 0; i < ds.vocab.size(); ++i) tokens.push_back(ds.vocab.token(i));
  d["ids"] = ids;
  d["features"] = feats;
  d["transcripts"] = transcripts;
  d["tokens"] = tokens;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gated interlayer collaboration for CTC: core operations";

  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<NumericError>(m, "NumericError");
  py::register_exception<OovError>(m, "OovError");

  m.attr("BLANK") = kBlank;
  m.attr("LM_END") = kLmEnd;

  m.def("tap_layer_indices", &tap_layer_indices, py::arg("layers"), py::arg("taps"),
        "Tap layer indices round(i*L/(K+1)) for i in 1..K.");

  m.def(
      "ctc_loss",
      [](const Rows& q, const std::vector<int>& labels, int blank) {
        CtcResult r = ctc_loss(to_matrix(q), labels, blank);
        return py::make_tuple(r.loss, r.feasible);
      },
      py::arg("posteriors"), py::arg("labels"), py::arg("blank") = kBlank,
      "-log P(labels | posteriors) and feasibility, via the forward-backward lattice.");

  m.def(
      "ctc_brute_force_prob",
      [](const Rows& q, const std::vector<int>& labels, int blank) {
        return ctc_brute_force_prob(to_matrix(q), labels, blank);
      },
      py::arg("posteriors"), py::arg("labels"), py::arg("blank") = kBlank,
      "Exact P(labels) by enumerating alignments; small inputs only.");

  py::class_<NgramModel>(m, "NgramModel")
      .def_readonly("order", &NgramModel::order)
      .def_readonly("vocab", &NgramModel::vocab)
      .def("prob", &NgramModel::prob, py::arg("context"), py::arg("token"))
      .def("log_prob", &NgramModel::log_prob, py::arg("context"), py::arg("token"))
      .def("in_vocab", &NgramModel::in_vocab, py::arg("token"))
      .def("save", &NgramModel::save, py::arg("path"))
      .def_static("load", &NgramModel::load, py::arg("path"));

  m.def(
      "lm_train",
      [](const std::vector<std::vector<int>>& corpus, int order,
         const std::optional<std::vector<double>>& weights,
         const std::vector<int>& vocab) {
        return lm_train(corpus, order, weights ? *weights : default_lm_weights(order), vocab);
      },
      py::arg("corpus"), py::arg("order") = 4, py::arg("weights") = std::nullopt,
      py::arg("vocab") = std::vector<int>{},
      "Interpolated n-gram model over integer token ids.");

  m.def("lm_perplexity", &lm_perplexity, py::arg("model"), py::arg("corpus"));

  m.def(
      "greedy_decode",
      [](const Rows& q, int blank) { return greedy_decode(to_matrix(q), blank); },
      py::arg("posteriors"), py::arg("blank") = kBlank);

  m.def(
      "prefix_beam_search",
      [](const Rows& q, int beam, const NgramModel* lm, double lm_weight, double length_bonus,
         int blank) {
        BeamResult r = prefix_beam_search_scored(to_matrix(q), beam, lm, lm_weight, length_bonus,
                                                 blank);
        return py::make_tuple(r.tokens, r.score);
      },
      py::arg("posteriors"), py::arg("beam"), py::arg("lm") = nullptr,
      py::arg("lm_weight") = 0.0, py::arg("length_bonus") = 0.0, py::arg("blank") = kBlank,
      "Beam decode; returns (tokens, combined score).");

  m.def(
      "edit_distance",
      [](const std::vector<int>& ref, const std::vector<int>& hyp) {
        EditCounts e = edit_distance(ref, hyp);
        return py::make_tuple(e.substitutions, e.insertions, e.deletions);
      },
      py::arg("ref"), py::arg("hyp"), "Returns (substitutions, insertions, deletions).");

  m.def(
      "cer",
      [](const std::vector<std::vector<int>>& refs, const std::vector<std::vector<int>>& hyps) {
        return aggregate_cer(refs, hyps).rate();
      },
      py::arg("refs"), py::arg("hyps"), "Corpus-level (S+I+D)/ref_len.");

  m.def("synth_dataset", &synth_dataset, py::arg("seed") = 1, py::arg("n_utts") = 8,
        py::arg("vocab_size") = 8, py::arg("min_len") = 2, py::arg("max_len") = 6,
        py::arg("frames_per_token") = 4, py::arg("noise_std") = 0.1, py::arg("d_feat") = 16,
        "Deterministic synthetic dataset as dict of ids/features/transcripts/tokens.");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, uint64_t>(), py::arg("config_json"),
           py::arg("seed") = 1,
           "Fresh model from the JSON used in a run config's \"model\" section.")
      .def_static("load", &PyModel::load, py::arg("path"), "Model from a training checkpoint.")
      .def_property_readonly("config_json", &PyModel::config_json)
      .def_property_readonly("vocab", &PyModel::vocab,
                             "Checkpoint vocabulary tokens; empty for a fresh model.")
      .def_property_readonly("tap_layers", &PyModel::tap_layers)
      .def("greedy", &PyModel::greedy, py::arg("features"))
      .def("forward", &PyModel::forward, py::arg("features"), py::arg("labels") = std::nullopt,
           "Posteriors for one utterance; losses included when labels are given.");
}
