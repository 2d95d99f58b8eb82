#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gic/ngram.hpp"
#include "gic/runconfig.hpp"
#include "gic/train.hpp"

namespace fs = std::filesystem;
using namespace gic;

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": not a number: '" + s + "'");
  }
}

// Training and held-out datasets resolved from the config's data section.
struct ResolvedData {
  Dataset train;
  std::optional<Dataset> val;
};

ResolvedData resolve_data(const DataConfig& dc) {
  ResolvedData r;
  if (dc.use_synth) {
    SynthParams sp = dc.synth;
    sp.n_utts = dc.synth.n_utts + dc.val_utts;
    Dataset all = synth_generate(sp);
    r.train.vocab = all.vocab;
    r.train.utts.assign(all.utts.begin(), all.utts.begin() + dc.synth.n_utts);
    if (dc.val_utts > 0) {
      Dataset v;
      v.vocab = all.vocab;
      v.utts.assign(all.utts.begin() + dc.synth.n_utts, all.utts.end());
      r.val = std::move(v);
    }
    return r;
  }
  if (dc.train_manifest.empty())
    throw ConfigError("config: data section configures neither manifests nor synth");
  r.train = load_dataset_from_manifest(dc.train_manifest);
  if (!dc.val_manifest.empty()) {
    Dataset v = load_dataset_from_manifest(dc.val_manifest);
    if (!(v.vocab == r.train.vocab))
      throw DataError("data: train and val vocabularies differ");
    r.val = std::move(v);
  }
  return r;
}

std::string metrics_header(const GicModel& model, bool taps_logged) {
  std::string h = "epoch\tsteps\tlr\ttotal_loss\tfinal_loss";
  if (taps_logged)
    for (int l : model.tap_layers()) h += "\tloss_tap_" + std::to_string(l);
  h += "\tval_cer\tskipped";
  return h;
}

std::string metrics_row(const EpochMetrics& m) {
  std::string r = std::to_string(m.epoch) + "\t" + std::to_string(m.steps) + "\t" + fmt(m.lr) +
                  "\t" + fmt(m.total_loss) + "\t" + fmt(m.final_loss);
  for (double t : m.tap_losses) r += "\t" + fmt(t);
  r += "\t" + fmt(m.val_cer) + "\t" + std::to_string(m.skipped);
  return r;
}

// --------------------------------------------------------------------------
// synth-data

struct SynthArgs {
  std::string out;
  SynthParams p;
};

void cmd_synth_data(const SynthArgs& a) {
  Dataset ds = synth_generate(a.p);
  write_dataset(ds, a.out);
  std::cout << "wrote " << ds.utts.size() << " utterances to " << a.out << " (vocab "
            << ds.vocab.size() << ", d_feat " << ds.d_feat() << ")\n";
}

// --------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string out;
  std::string data_dir;
  std::string val_dir;
  std::string resume;
  uint64_t seed = 0;
  bool seed_set = false;
  int epochs = 0;
  bool epochs_set = false;
};

void cmd_train(const TrainArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::from_file(a.config);
  if (a.seed_set) rc.seed = a.seed;
  if (a.epochs_set) rc.data.epochs = a.epochs;
  if (!a.data_dir.empty()) {
    rc.data.train_manifest = (fs::path(a.data_dir) / "manifest.tsv").string();
    rc.data.use_synth = false;
    rc.data.val_utts = 0;
  }
  if (!a.val_dir.empty()) rc.data.val_manifest = (fs::path(a.val_dir) / "manifest.tsv").string();
  rc.validate();

  ResolvedData data = resolve_data(rc.data);
  TrainLoopConfig loop;
  loop.epochs = rc.data.epochs;
  loop.batch_size = rc.data.batch_size;
  loop.sort_batches = rc.data.sort_batches;
  Trainer trainer(rc.model, rc.optimizer, loop, rc.seed);

  if (!a.resume.empty()) {
    Vocabulary from_ckpt = trainer.resume(a.resume);
    if (!(from_ckpt == data.train.vocab))
      throw DataError("resume: checkpoint vocabulary differs from the dataset's");
    std::cout << "resumed from " << a.resume << " at epoch " << trainer.epoch() << ", step "
              << trainer.optimizer().steps() << "\n";
  }

  fs::create_directories(a.out);
  {
    std::ofstream cf(fs::path(a.out) / "config.json", std::ios::binary);
    cf << rc.to_json_text() << "\n";
  }
  const std::string ckpt_path = (fs::path(a.out) / "last.ckpt").string();
  std::ofstream mf(fs::path(a.out) / "metrics.tsv", std::ios::binary);
  if (!mf) throw DataError("train: cannot write metrics in " + a.out);
  const bool taps_logged =
      rc.model.enable_intermediate_loss && !trainer.model().tap_layers().empty();
  mf << metrics_header(trainer.model(), taps_logged) << "\n";

  const Dataset* val = data.val ? &*data.val : nullptr;
  bool wrote_ckpt = false;
  for (int64_t e = trainer.epoch() + 1; e <= loop.epochs; ++e) {
    EpochMetrics m = trainer.train_epoch(data.train, val);
    const std::string row = metrics_row(m);
    mf << row << "\n";
    mf.flush();
    std::cout << row << std::endl;
    trainer.save_checkpoint(ckpt_path, data.train.vocab);
    wrote_ckpt = true;
  }
  // epochs: 0 (or a resume already at the target) still leaves a checkpoint.
  if (!wrote_ckpt) trainer.save_checkpoint(ckpt_path, data.train.vocab);
  std::cout << "checkpoint: " << ckpt_path << "\n";
}

// --------------------------------------------------------------------------
// decode

struct DecodeArgs {
  std::string ckpt;
  std::string data_dir;
  std::string out;
  std::string config;
  DecodeConfig dc;
  bool mode_set = false, beam_set = false, lm_set = false, lmw_set = false, bonus_set = false;
  bool probe_taps = false;
};

std::string tap_out_path(const std::string& out, int layer) {
  fs::path p(out);
  const std::string ext = p.extension().string();
  fs::path stem = p.parent_path() / p.stem();
  return stem.string() + ".tap" + std::to_string(layer) + ext;
}

void require_finite(const Matrix& q, const std::string& utt_id) {
  for (double v : q.data)
    if (!std::isfinite(v))
      throw NumericError("decode: non-finite posterior for utterance " + utt_id);
}

void cmd_decode(const DecodeArgs& a) {
  DecodeConfig dc = a.config.empty() ? DecodeConfig{} : RunConfig::from_file(a.config).decode;
  if (a.mode_set) dc.mode = a.dc.mode;
  if (a.beam_set) dc.beam = a.dc.beam;
  if (a.lm_set) dc.lm_path = a.dc.lm_path;
  if (a.lmw_set) dc.lm_weight = a.dc.lm_weight;
  if (a.bonus_set) dc.length_bonus = a.dc.length_bonus;
  dc.validate();

  CheckpointData ck = load_checkpoint(a.ckpt);
  GicModel model = model_from_checkpoint(ck);
  Dataset ds = load_dataset(a.data_dir);
  if (!(ds.vocab == ck.vocab))
    throw DataError("decode: dataset vocabulary differs from the checkpoint's");
  if (ds.d_feat() != ck.config.d_feat)
    throw DataError("decode: dataset feature dim does not match the checkpoint");

  std::optional<NgramModel> lm;
  if (dc.lm_weight > 0.0) {
    lm = NgramModel::load(dc.lm_path);
    for (int v = 1; v < ds.vocab.size(); ++v)
      if (!lm->in_vocab(v))
        throw DataError("decode: LM vocabulary does not cover token '" + ds.vocab.token(v) +
                        "' (id " + std::to_string(v) + ")");
  }

  auto decode_one = [&](const Matrix& q) {
    return dc.mode == "greedy"
               ? greedy_decode(q)
               : prefix_beam_search(q, dc.beam, lm ? &*lm : nullptr, dc.lm_weight,
                                    dc.length_bonus);
  };

  std::ofstream hf(a.out, std::ios::binary);
  if (!hf) throw DataError("decode: cannot write " + a.out);
  std::map<int, std::ofstream> tap_files;
  if (a.probe_taps)
    for (int l : model.tap_layers()) {
      tap_files.emplace(l, std::ofstream(tap_out_path(a.out, l), std::ios::binary));
      if (!tap_files.at(l)) throw DataError("decode: cannot write tap hypotheses for layer " +
                                            std::to_string(l));
    }

  for (const Utterance& u : ds.utts) {
    Tape tape;
    ModelOutput out = model.forward(tape, u.features, u.features.rows, nullptr, FwdOpts{});
    require_finite(out.final_posterior, u.id);
    hf << u.id << '\t' << ds.vocab.decode(decode_one(out.final_posterior)) << '\n';
    if (a.probe_taps)
      for (const TapOutput& tp : out.taps) {
        require_finite(tp.posterior, u.id);
        tap_files.at(tp.layer) << u.id << '\t' << ds.vocab.decode(decode_one(tp.posterior))
                               << '\n';
      }
  }
  std::cout << "wrote " << ds.utts.size() << " hypotheses to " << a.out;
  if (a.probe_taps && !model.tap_layers().empty()) {
    std::cout << " (+ taps:";
    for (int l : model.tap_layers()) std::cout << " " << tap_out_path(a.out, l);
    std::cout << ")";
  }
  std::cout << "\n";
}

// --------------------------------------------------------------------------
// evaluate

struct EvalArgs {
  std::string data_dir;
  std::string hyp;
  std::string out;
  int worst = 10;
};

std::map<std::string, std::string> read_hyp_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("evaluate: cannot read " + path);
  std::map<std::string, std::string> hyps;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("evaluate: hyp row " + std::to_string(lineno) + " has no tab separator");
    const std::string id = line.substr(0, tab);
    if (hyps.count(id))
      throw DataError("evaluate: duplicate hypothesis for utterance " + id);
    hyps[id] = line.substr(tab + 1);
  }
  return hyps;
}

void cmd_evaluate(const EvalArgs& a) {
  Dataset ds = load_dataset(a.data_dir);
  std::map<std::string, std::string> hyps = read_hyp_file(a.hyp);

  struct Row {
    std::string id;
    EditCounts counts;
    int ref_len = 0;
    double rate = 0.0;
    std::string ref, hyp;
  };
  std::vector<Row> rows;
  std::vector<std::vector<int>> refs, hyp_ids;
  for (const Utterance& u : ds.utts) {
    auto it = hyps.find(u.id);
    if (it == hyps.end())
      throw DataError("evaluate: missing hypothesis for utterance " + u.id);
    Row r;
    r.id = u.id;
    r.ref = ds.vocab.decode(u.transcript);
    r.hyp = it->second;
    std::vector<int> h = ds.vocab.encode(it->second);
    r.counts = edit_distance(u.transcript, h);
    r.ref_len = static_cast<int>(u.transcript.size());
    r.rate = r.ref_len > 0 ? static_cast<double>(r.counts.total()) / r.ref_len
                           : (r.counts.total() > 0 ? kPosInf : 0.0);
    rows.push_back(std::move(r));
    refs.push_back(u.transcript);
    hyp_ids.push_back(std::move(h));
    hyps.erase(it);
  }
  if (!hyps.empty())
    throw DataError("evaluate: hypothesis for unknown utterance " + hyps.begin()->first);

  const CorpusErrors agg = aggregate_cer(refs, hyp_ids);
  std::ostringstream rep;
  rep << "utterances\t" << rows.size() << "\n";
  rep << "ref_len\t" << agg.ref_len << "\n";
  rep << "cer\t" << fmt(agg.rate()) << "\n";
  rep << "substitutions\t" << agg.counts.substitutions << "\n";
  rep << "insertions\t" << agg.counts.insertions << "\n";
  rep << "deletions\t" << agg.counts.deletions << "\n";

  std::vector<const Row*> worst;
  for (const Row& r : rows) worst.push_back(&r);
  std::stable_sort(worst.begin(), worst.end(), [](const Row* x, const Row* y) {
    if (x->rate != y->rate) return x->rate > y->rate;
    return x->id < y->id;
  });
  const int n = std::min<int>(a.worst, static_cast<int>(worst.size()));
  rep << "worst\tid\tcer\tS\tI\tD\tref\thyp\n";
  for (int i = 0; i < n; ++i) {
    const Row& r = *worst[i];
    rep << "worst\t" << r.id << "\t" << fmt(r.rate) << "\t" << r.counts.substitutions << "\t"
        << r.counts.insertions << "\t" << r.counts.deletions << "\t" << r.ref << "\t" << r.hyp
        << "\n";
  }

  std::cout << rep.str();
  if (!a.out.empty()) {
    std::ofstream of(a.out, std::ios::binary);
    if (!of) throw DataError("evaluate: cannot write " + a.out);
    of << rep.str();
  }
}

// --------------------------------------------------------------------------
// lm-train

struct LmArgs {
  std::string data_dir;
  std::string text;
  std::string out;
  int order = 4;
  std::string weights;
};

void cmd_lm_train(const LmArgs& a) {
  Dataset ds = load_dataset(a.data_dir);
  std::vector<std::vector<int>> corpus;
  if (!a.text.empty()) {
    std::ifstream f(a.text, std::ios::binary);
    if (!f) throw DataError("lm-train: cannot read " + a.text);
    std::string line;
    while (std::getline(f, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) corpus.push_back(ds.vocab.encode(line));
    }
  } else {
    for (const Utterance& u : ds.utts) corpus.push_back(u.transcript);
  }
  if (corpus.empty()) throw DataError("lm-train: empty corpus");

  std::vector<double> weights;
  if (a.weights.empty()) {
    weights = default_lm_weights(a.order);
  } else {
    for (const std::string& w : split_commas(a.weights))
      weights.push_back(parse_double(w, "lm-train weights"));
  }

  std::vector<int> ids;
  for (int v = 1; v < ds.vocab.size(); ++v) ids.push_back(v);
  NgramModel lm = lm_train(corpus, a.order, weights, ids);
  lm.save(a.out);
  std::cout << "trained order-" << a.order << " LM on " << corpus.size()
            << " sentences; perplexity " << fmt(lm_perplexity(lm, corpus)) << "; wrote " << a.out
            << "\n";
}

// --------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string config;
  std::string axis;
  std::string values;
  std::string out;
};

void cmd_sweep(const SweepArgs& a) {
  if (a.axis != "K" && a.axis != "lambda")
    throw ConfigError("sweep: axis must be 'K' or 'lambda'");
  RunConfig base = RunConfig::from_file(a.config);
  base.validate();
  const std::vector<std::string> values = split_commas(a.values);
  if (values.empty() || (values.size() == 1 && values[0].empty()))
    throw ConfigError("sweep: no values given");

  ResolvedData data = resolve_data(base.data);
  const Dataset* val = data.val ? &*data.val : nullptr;

  fs::create_directories(a.out);
  std::ofstream tf(fs::path(a.out) / "sweep.tsv", std::ios::binary);
  if (!tf) throw DataError("sweep: cannot write table in " + a.out);
  const std::string header = a.axis + "\tval_cer\tstatus";
  tf << header << "\n";
  std::cout << header << "\n";

  for (const std::string& vs : values) {
    RunConfig rc = base;
    std::string cer = "-";
    std::string status = "ok";
    try {
      if (a.axis == "K") {
        const double v = parse_double(vs, "sweep K value");
        rc.model.taps = static_cast<int>(v);
        if (v != rc.model.taps) throw ConfigError("sweep: K must be an integer: " + vs);
      } else {
        rc.model.lambda = parse_double(vs, "sweep lambda value");
      }
      rc.validate();
      TrainLoopConfig loop;
      loop.epochs = rc.data.epochs;
      loop.batch_size = rc.data.batch_size;
      loop.sort_batches = rc.data.sort_batches;
      Trainer trainer(rc.model, rc.optimizer, loop, rc.seed);  // shared seed per point
      EpochMetrics m;
      for (int e = 0; e < loop.epochs; ++e) m = trainer.train_epoch(data.train, val);
      cer = fmt(m.val_cer);
    } catch (const Error& e) {
      status = std::string("failed: ") + e.what();
    }
    const std::string row = vs + "\t" + cer + "\t" + status;
    tf << row << "\n";
    tf.flush();
    std::cout << row << std::endl;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated interlayer collaboration for CTC sequence recognition"};
  app.require_subcommand(1);

  SynthArgs sa;
  CLI::App* synth = app.add_subcommand("synth-data", "Generate a synthetic dataset");
  synth->add_option("--out", sa.out, "output dataset directory")->required();
  synth->add_option("--seed", sa.p.seed, "generator seed");
  synth->add_option("--utts", sa.p.n_utts, "number of utterances");
  synth->add_option("--vocab-size", sa.p.vocab_size, "vocabulary size including blank");
  synth->add_option("--min-len", sa.p.min_len, "minimum transcript length");
  synth->add_option("--max-len", sa.p.max_len, "maximum transcript length");
  synth->add_option("--frames-per-token", sa.p.frames_per_token, "frames per token");
  synth->add_option("--noise-std", sa.p.noise_std, "feature noise standard deviation");
  synth->add_option("--d-feat", sa.p.d_feat, "feature dimension");
  synth->callback([&] { cmd_synth_data(sa); });

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", ta.config, "run config JSON");
  train->add_option("--out", ta.out, "output directory (checkpoint, metrics)")->required();
  train->add_option("--data", ta.data_dir, "training dataset directory (overrides config)");
  train->add_option("--val", ta.val_dir, "validation dataset directory (overrides config)");
  train->add_option("--resume", ta.resume, "checkpoint to resume from");
  CLI::Option* seed_opt = train->add_option("--seed", ta.seed, "seed (overrides config)");
  CLI::Option* ep_opt = train->add_option("--epochs", ta.epochs, "epochs (overrides config)");
  train->callback([&, seed_opt, ep_opt] {
    ta.seed_set = seed_opt->count() > 0;
    ta.epochs_set = ep_opt->count() > 0;
    cmd_train(ta);
  });

  DecodeArgs da;
  CLI::App* dec = app.add_subcommand("decode", "Decode a dataset with a checkpoint");
  dec->add_option("--ckpt", da.ckpt, "checkpoint path")->required();
  dec->add_option("--data", da.data_dir, "dataset directory")->required();
  dec->add_option("--out", da.out, "hypothesis TSV path")->required();
  dec->add_option("--config", da.config, "run config JSON (decode section)");
  CLI::Option* mo = dec->add_option("--mode", da.dc.mode, "greedy or beam");
  CLI::Option* bo = dec->add_option("--beam", da.dc.beam, "beam width");
  CLI::Option* lo = dec->add_option("--lm", da.dc.lm_path, "n-gram LM path");
  CLI::Option* wo = dec->add_option("--lm-weight", da.dc.lm_weight, "shallow fusion weight");
  CLI::Option* go = dec->add_option("--length-bonus", da.dc.length_bonus, "length bonus");
  dec->add_flag("--probe-taps", da.probe_taps, "also decode each tap posterior");
  dec->callback([&, mo, bo, lo, wo, go] {
    da.mode_set = mo->count() > 0;
    da.beam_set = bo->count() > 0;
    da.lm_set = lo->count() > 0;
    da.lmw_set = wo->count() > 0;
    da.bonus_set = go->count() > 0;
    cmd_decode(da);
  });

  EvalArgs ea;
  CLI::App* ev = app.add_subcommand("evaluate", "Score a hypothesis file against references");
  ev->add_option("--data", ea.data_dir, "dataset directory with references")->required();
  ev->add_option("--hyp", ea.hyp, "hypothesis TSV")->required();
  ev->add_option("--out", ea.out, "also write the report here");
  ev->add_option("--worst", ea.worst, "how many worst utterances to list");
  ev->callback([&] { cmd_evaluate(ea); });

  LmArgs la;
  CLI::App* lm = app.add_subcommand("lm-train", "Train an n-gram language model");
  lm->add_option("--data", la.data_dir, "dataset directory (vocabulary and transcripts)")
      ->required();
  lm->add_option("--text", la.text, "corpus text file, one utterance per line");
  lm->add_option("--order", la.order, "n-gram order");
  lm->add_option("--weights", la.weights, "comma-separated interpolation weights");
  lm->add_option("--out", la.out, "LM output path")->required();
  lm->callback([&] { cmd_lm_train(la); });

  SweepArgs wa;
  CLI::App* sw = app.add_subcommand("sweep", "Train across an axis of K or lambda values");
  sw->add_option("--config", wa.config, "base run config JSON")->required();
  sw->add_option("--axis", wa.axis, "K or lambda")->required();
  sw->add_option("--values", wa.values, "comma-separated axis values")->required();
  sw->add_option("--out", wa.out, "output directory for the table")->required();
  sw->callback([&] { cmd_sweep(wa); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
