#include "gic/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gic/binfile.hpp"
#include "gic/layers.hpp"
#include "gic/runconfig.hpp"

namespace gic {

void OptimizerConfig::validate() const {
  if (!(lr_peak > 0.0)) throw ConfigError("optimizer: lr_peak must be positive");
  if (warmup_steps < 1) throw ConfigError("optimizer: warmup_steps must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("optimizer: beta1 must be in [0,1)");
  if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("optimizer: beta2 must be in [0,1)");
  if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be positive");
  if (clip_norm < 0.0) throw ConfigError("optimizer: clip_norm must be >= 0");
}

double lr_schedule(const OptimizerConfig& cfg, int64_t step) {
  if (step < 1) throw ConfigError("lr_schedule: step counts from 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.lr_peak * std::min(s / w, std::sqrt(w / s));
}

double clip_gradients(const std::vector<Parameter*>& params, double clip_norm) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (clip_norm > 0.0 && norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad) g *= scale;
  }
  return norm;
}

Adam::Adam(OptimizerConfig cfg, std::vector<Parameter*> params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

double Adam::step() {
  clip_gradients(params_, cfg_.clip_norm);
  ++step_;
  const double lr = lr_schedule(cfg_, step_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    for (size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
  return lr;
}

void Adam::restore(int64_t step, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
  if (step < 0) throw DataError("optimizer state: negative step count");
  if (m.size() != params_.size() || v.size() != params_.size())
    throw DataError("optimizer state: moment count mismatch");
  for (size_t i = 0; i < params_.size(); ++i)
    if (m[i].size() != params_[i]->value.size() || v[i].size() != params_[i]->value.size())
      throw DataError("optimizer state: moment size mismatch for " + params_[i]->name);
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

void TrainLoopConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
}

namespace {

// Shortest feature length (after subsampling) that admits any CTC alignment.
int min_ctc_frames(const std::vector<int>& labels) {
  int repeats = 0;
  for (size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++repeats;
  return static_cast<int>(labels.size()) + repeats;
}

}  // namespace

Trainer::Trainer(const GicConfig& model_cfg, const OptimizerConfig& opt_cfg,
                 const TrainLoopConfig& loop_cfg, uint64_t seed)
    : model_cfg_(model_cfg),
      loop_(loop_cfg),
      model_(model_cfg, seed),
      adam_(opt_cfg, model_.params().all()),
      seed_(seed),
      rng_(mix_seed(seed, "dropout")) {
  loop_.validate();
}

void Trainer::check_dataset(const Dataset& ds) const {
  if (ds.utts.empty()) throw DataError("train: dataset has no utterances");
  if (ds.vocab.size() != model_cfg_.vocab_size)
    throw DataError("train: dataset vocab size " + std::to_string(ds.vocab.size()) +
                    " does not match model vocab_size " +
                    std::to_string(model_cfg_.vocab_size));
  if (ds.d_feat() != model_cfg_.d_feat)
    throw DataError("train: dataset feature dim " + std::to_string(ds.d_feat()) +
                    " does not match model d_feat " + std::to_string(model_cfg_.d_feat));
}

EpochMetrics Trainer::train_epoch(const Dataset& train, const Dataset* val) {
  check_dataset(train);
  ++epoch_;
  steps_.clear();

  const uint64_t batch_seed = mix_seed(seed_, "epoch:" + std::to_string(epoch_));
  const std::vector<Batch> batches =
      make_batches(train, loop_.batch_size, loop_.sort_batches, batch_seed);

  const size_t n_taps = model_.tap_layers().size();
  const bool track_taps = model_cfg_.enable_intermediate_loss && n_taps > 0;
  double total_sum = 0.0, final_sum = 0.0;
  std::vector<double> tap_sums(track_taps ? n_taps : 0, 0.0);
  int64_t counted = 0;
  int skipped = 0;
  double last_lr = 0.0;

  for (const Batch& b : batches) {
    model_.params().zero_grad_all();
    int n_ok = 0, batch_skipped = 0;
    double batch_loss = 0.0;
    for (size_t i = 0; i < b.utt_index.size(); ++i) {
      const std::vector<int>& labels = b.labels[i];
      if (Subsampler::subsampled_len(b.lengths[i]) < min_ctc_frames(labels)) {
        ++batch_skipped;
        continue;
      }
      Tape tape;
      FwdOpts opts;
      opts.train = true;
      opts.dropout = model_cfg_.dropout;
      opts.rng = &rng_;
      ModelOutput out = model_.forward(tape, b.features[i], b.lengths[i], &labels, opts);
      if (!out.feasible) {
        ++batch_skipped;
        continue;
      }
      if (!std::isfinite(out.loss))
        throw NumericError("train: non-finite loss " + std::to_string(out.loss) + " at epoch " +
                           std::to_string(epoch_) + ", step " + std::to_string(adam_.steps() + 1) +
                           ", utterance " + train.utts[b.utt_index[i]].id);
      tape.backward(out.loss_node);
      batch_loss += out.loss;
      total_sum += out.loss;
      final_sum += out.final_loss;
      if (track_taps)
        for (size_t k = 0; k < n_taps; ++k) tap_sums[k] += out.taps[k].loss;
      ++n_ok;
    }
    skipped += batch_skipped;
    if (n_ok == 0) continue;
    if (n_ok > 1) {
      const double inv = 1.0 / n_ok;
      for (Parameter* p : adam_.params())
        for (double& g : p->grad) g *= inv;
    }
    last_lr = adam_.step();
    steps_.push_back({adam_.steps(), last_lr, batch_loss / n_ok, n_ok, batch_skipped});
    counted += n_ok;
  }

  EpochMetrics m;
  m.epoch = epoch_;
  m.lr = last_lr;
  m.skipped = skipped;
  m.steps = adam_.steps();
  if (counted > 0) {
    m.total_loss = total_sum / static_cast<double>(counted);
    m.final_loss = final_sum / static_cast<double>(counted);
    for (double s : tap_sums) m.tap_losses.push_back(s / static_cast<double>(counted));
  }
  m.val_cer = eval_cer(val ? *val : train);
  return m;
}

double Trainer::eval_cer(const Dataset& data) {
  check_dataset(data);
  std::vector<std::vector<int>> refs, hyps;
  refs.reserve(data.utts.size());
  hyps.reserve(data.utts.size());
  for (const Utterance& u : data.utts) {
    refs.push_back(u.transcript);
    hyps.push_back(model_.greedy(u.features));
  }
  return aggregate_cer(refs, hyps).rate();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::vector<uint8_t> encode_vocab(const Vocabulary& vocab) {
  std::vector<uint8_t> out;
  put_u32(out, static_cast<uint32_t>(vocab.size()));
  for (int i = 0; i < vocab.size(); ++i) put_string(out, vocab.token(i));
  return out;
}

Vocabulary decode_vocab(const std::vector<uint8_t>& in) {
  size_t pos = 0;
  const uint32_t n = get_u32(in, pos);
  std::vector<std::string> tokens;
  tokens.reserve(n);
  for (uint32_t i = 0; i < n; ++i) tokens.push_back(get_string(in, pos));
  return Vocabulary(std::move(tokens));
}

void install_params(ParamStore& ps,
                    const std::vector<std::pair<std::string, std::vector<double>>>& entries) {
  const std::vector<Parameter*> all = ps.all();
  if (entries.size() != all.size())
    throw DataError("checkpoint: expected " + std::to_string(all.size()) + " parameters, found " +
                    std::to_string(entries.size()));
  for (const auto& [name, values] : entries) {
    if (!ps.has(name)) throw DataError("checkpoint: unknown parameter " + name);
    Parameter& p = ps.find(name);
    if (values.size() != p.value.size())
      throw DataError("checkpoint: size mismatch for parameter " + name);
    p.value = values;
  }
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path, const Vocabulary& vocab) const {
  BinWriter w("gic-ckpt");
  w.add_text("config", config_to_json(model_cfg_));
  w.add_text("optimizer", optimizer_to_json(adam_.config()));
  w.add("vocab", encode_vocab(vocab));

  const std::vector<Parameter*> all = model_.params().all();
  std::vector<uint8_t> pbuf;
  put_u32(pbuf, static_cast<uint32_t>(all.size()));
  for (const Parameter* p : all) {
    put_string(pbuf, p->name);
    put_u32(pbuf, static_cast<uint32_t>(p->shape.size()));
    for (int d : p->shape) put_u32(pbuf, static_cast<uint32_t>(d));
    for (double v : p->value) put_f64(pbuf, v);
  }
  w.add("params", std::move(pbuf));

  std::vector<uint8_t> abuf;
  put_i64(abuf, adam_.steps());
  put_u32(abuf, static_cast<uint32_t>(all.size()));
  for (size_t i = 0; i < all.size(); ++i) {
    put_string(abuf, all[i]->name);
    put_u32(abuf, static_cast<uint32_t>(adam_.moment1()[i].size()));
    for (double v : adam_.moment1()[i]) put_f64(abuf, v);
    put_u32(abuf, static_cast<uint32_t>(adam_.moment2()[i].size()));
    for (double v : adam_.moment2()[i]) put_f64(abuf, v);
  }
  w.add("adam", std::move(abuf));

  std::vector<uint8_t> cbuf;
  put_i64(cbuf, epoch_);
  put_i64(cbuf, adam_.steps());
  w.add("counters", std::move(cbuf));

  std::ostringstream rs;
  rs << rng_;
  w.add_text("rng", rs.str());
  w.save(path);
}

CheckpointData load_checkpoint(const std::string& path) {
  BinReader r = BinReader::load(path, "gic-ckpt");
  CheckpointData c;
  c.config = config_from_json(r.text("config"));
  c.optimizer_json = r.text("optimizer");
  c.vocab = decode_vocab(r.section("vocab"));

  {
    const std::vector<uint8_t>& in = r.section("params");
    size_t pos = 0;
    const uint32_t n = get_u32(in, pos);
    for (uint32_t i = 0; i < n; ++i) {
      std::string name = get_string(in, pos);
      const uint32_t ndim = get_u32(in, pos);
      size_t count = 1;
      for (uint32_t d = 0; d < ndim; ++d) count *= get_u32(in, pos);
      std::vector<double> values(count);
      for (double& v : values) v = get_f64(in, pos);
      c.params.emplace_back(std::move(name), std::move(values));
    }
  }
  {
    const std::vector<uint8_t>& in = r.section("adam");
    size_t pos = 0;
    c.step = get_i64(in, pos);
    const uint32_t n = get_u32(in, pos);
    if (n != c.params.size()) throw DataError("checkpoint: optimizer entry count mismatch");
    for (uint32_t i = 0; i < n; ++i) {
      const std::string name = get_string(in, pos);
      if (name != c.params[i].first)
        throw DataError("checkpoint: optimizer state for " + name + " out of order");
      std::vector<double> m(get_u32(in, pos));
      for (double& v : m) v = get_f64(in, pos);
      std::vector<double> v2(get_u32(in, pos));
      for (double& v : v2) v = get_f64(in, pos);
      c.adam_m.push_back(std::move(m));
      c.adam_v.push_back(std::move(v2));
    }
  }
  {
    const std::vector<uint8_t>& in = r.section("counters");
    size_t pos = 0;
    c.epoch = get_i64(in, pos);
    const int64_t step = get_i64(in, pos);
    if (step != c.step) throw DataError("checkpoint: inconsistent step counters");
  }
  c.rng_state = r.text("rng");
  return c;
}

Vocabulary Trainer::resume(const std::string& path) {
  CheckpointData c = load_checkpoint(path);
  if (config_to_json(c.config) != config_to_json(model_cfg_))
    throw ConfigError("checkpoint: model config does not match the run config");
  if (c.optimizer_json != optimizer_to_json(adam_.config()))
    throw ConfigError("checkpoint: optimizer config does not match the run config");
  install_params(model_.params(), c.params);
  adam_.restore(c.step, std::move(c.adam_m), std::move(c.adam_v));
  epoch_ = c.epoch;
  std::istringstream rs(c.rng_state);
  rs >> rng_;
  if (!rs) throw DataError("checkpoint: bad rng state");
  return c.vocab;
}

GicModel model_from_checkpoint(const CheckpointData& ckpt) {
  GicModel model(ckpt.config, 0);
  install_params(model.params(), ckpt.params);
  return model;
}

}  // namespace gic
