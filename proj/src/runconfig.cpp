#include "gic/runconfig.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace gic {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { throw ConfigError("config: " + msg); }

std::string join_path(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        known = true;
        break;
      }
    if (!known) bad("unknown key '" + join_path(where, it.key()) + "'");
  }
}

const json& require_object(const json& j, const std::string& where) {
  if (!j.is_object()) bad("'" + where + "' must be an object");
  return j;
}

template <typename T>
void read_field(const json& j, const std::string& where, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception&) {
    bad("bad value for '" + join_path(where, key) + "'");
  }
}

json model_to_obj(const GicConfig& c) {
  return json{{"backbone", backbone_to_string(c.backbone)},
              {"layers", c.layers},
              {"taps", c.taps},
              {"lambda", c.lambda},
              {"d_model", c.d_model},
              {"heads", c.heads},
              {"d_ff", c.d_ff},
              {"conv_kernel", c.conv_kernel},
              {"vocab_size", c.vocab_size},
              {"d_feat", c.d_feat},
              {"dropout", c.dropout},
              {"enable_gic", c.enable_gic},
              {"enable_intermediate_loss", c.enable_intermediate_loss},
              {"enable_gate", c.enable_gate},
              {"share_tap_projection", c.share_tap_projection},
              {"stop_gradient_soft_labels", c.stop_gradient_soft_labels}};
}

GicConfig model_from_obj(const json& j, const std::string& where) {
  require_object(j, where);
  check_keys(j, where,
             {"backbone", "layers", "taps", "lambda", "d_model", "heads", "d_ff", "conv_kernel",
              "vocab_size", "d_feat", "dropout", "enable_gic", "enable_intermediate_loss",
              "enable_gate", "share_tap_projection", "stop_gradient_soft_labels"});
  GicConfig c;
  std::string backbone = backbone_to_string(c.backbone);
  read_field(j, where, "backbone", backbone);
  c.backbone = backbone_from_string(backbone);
  read_field(j, where, "layers", c.layers);
  read_field(j, where, "taps", c.taps);
  read_field(j, where, "lambda", c.lambda);
  read_field(j, where, "d_model", c.d_model);
  read_field(j, where, "heads", c.heads);
  read_field(j, where, "d_ff", c.d_ff);
  read_field(j, where, "conv_kernel", c.conv_kernel);
  read_field(j, where, "vocab_size", c.vocab_size);
  read_field(j, where, "d_feat", c.d_feat);
  read_field(j, where, "dropout", c.dropout);
  read_field(j, where, "enable_gic", c.enable_gic);
  read_field(j, where, "enable_intermediate_loss", c.enable_intermediate_loss);
  read_field(j, where, "enable_gate", c.enable_gate);
  read_field(j, where, "share_tap_projection", c.share_tap_projection);
  read_field(j, where, "stop_gradient_soft_labels", c.stop_gradient_soft_labels);
  return c;
}

json optimizer_to_obj(const OptimizerConfig& c) {
  return json{{"lr_peak", c.lr_peak},   {"warmup_steps", c.warmup_steps},
              {"beta1", c.beta1},       {"beta2", c.beta2},
              {"epsilon", c.epsilon},   {"clip_norm", c.clip_norm}};
}

OptimizerConfig optimizer_from_obj(const json& j, const std::string& where) {
  require_object(j, where);
  check_keys(j, where, {"lr_peak", "warmup_steps", "beta1", "beta2", "epsilon", "clip_norm"});
  OptimizerConfig c;
  read_field(j, where, "lr_peak", c.lr_peak);
  read_field(j, where, "warmup_steps", c.warmup_steps);
  read_field(j, where, "beta1", c.beta1);
  read_field(j, where, "beta2", c.beta2);
  read_field(j, where, "epsilon", c.epsilon);
  read_field(j, where, "clip_norm", c.clip_norm);
  return c;
}

json synth_to_obj(const SynthParams& p) {
  return json{{"seed", p.seed},
              {"n_utts", p.n_utts},
              {"vocab_size", p.vocab_size},
              {"min_len", p.min_len},
              {"max_len", p.max_len},
              {"frames_per_token", p.frames_per_token},
              {"noise_std", p.noise_std},
              {"d_feat", p.d_feat}};
}

SynthParams synth_from_obj(const json& j, const std::string& where) {
  require_object(j, where);
  check_keys(j, where, {"seed", "n_utts", "vocab_size", "min_len", "max_len", "frames_per_token",
                        "noise_std", "d_feat"});
  SynthParams p;
  read_field(j, where, "seed", p.seed);
  read_field(j, where, "n_utts", p.n_utts);
  read_field(j, where, "vocab_size", p.vocab_size);
  read_field(j, where, "min_len", p.min_len);
  read_field(j, where, "max_len", p.max_len);
  read_field(j, where, "frames_per_token", p.frames_per_token);
  read_field(j, where, "noise_std", p.noise_std);
  read_field(j, where, "d_feat", p.d_feat);
  return p;
}

json data_to_obj(const DataConfig& c) {
  json j{{"train_manifest", c.train_manifest},
         {"val_manifest", c.val_manifest},
         {"val_utts", c.val_utts},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"sort_batches", c.sort_batches}};
  if (c.use_synth) j["synth"] = synth_to_obj(c.synth);
  return j;
}

DataConfig data_from_obj(const json& j, const std::string& where) {
  require_object(j, where);
  check_keys(j, where, {"train_manifest", "val_manifest", "synth", "val_utts", "batch_size",
                        "epochs", "sort_batches"});
  DataConfig c;
  read_field(j, where, "train_manifest", c.train_manifest);
  read_field(j, where, "val_manifest", c.val_manifest);
  if (j.contains("synth")) {
    c.use_synth = true;
    c.synth = synth_from_obj(j.at("synth"), join_path(where, "synth"));
  }
  read_field(j, where, "val_utts", c.val_utts);
  read_field(j, where, "batch_size", c.batch_size);
  read_field(j, where, "epochs", c.epochs);
  read_field(j, where, "sort_batches", c.sort_batches);
  return c;
}

json decode_to_obj(const DecodeConfig& c) {
  return json{{"mode", c.mode},
              {"beam", c.beam},
              {"lm_path", c.lm_path},
              {"lm_weight", c.lm_weight},
              {"length_bonus", c.length_bonus}};
}

DecodeConfig decode_from_obj(const json& j, const std::string& where) {
  require_object(j, where);
  check_keys(j, where, {"mode", "beam", "lm_path", "lm_weight", "length_bonus"});
  DecodeConfig c;
  read_field(j, where, "mode", c.mode);
  read_field(j, where, "beam", c.beam);
  read_field(j, where, "lm_path", c.lm_path);
  read_field(j, where, "lm_weight", c.lm_weight);
  read_field(j, where, "length_bonus", c.length_bonus);
  return c;
}

}  // namespace

void DataConfig::validate() const {
  if (!train_manifest.empty() && use_synth)
    bad("data: configure either manifests or synth, not both");
  if (use_synth && !val_manifest.empty())
    bad("data: synth mode holds out utterances via val_utts, not val_manifest");
  if (!use_synth && !val_manifest.empty() && train_manifest.empty())
    bad("data: val_manifest requires train_manifest");
  if (val_utts < 0) bad("data: val_utts must be >= 0");
  if (val_utts > 0 && !use_synth) bad("data: val_utts applies to synth mode only");
  if (batch_size < 1) bad("data: batch_size must be >= 1");
  if (epochs < 0) bad("data: epochs must be >= 0");
}

void DecodeConfig::validate() const {
  if (mode != "greedy" && mode != "beam") bad("decode: mode must be 'greedy' or 'beam'");
  if (beam < 1) bad("decode: beam must be >= 1");
  if (lm_weight < 0.0) bad("decode: lm_weight must be >= 0");
  if (lm_weight > 0.0 && lm_path.empty()) bad("decode: lm_weight > 0 requires lm_path");
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    bad(std::string("invalid JSON: ") + e.what());
  }
  require_object(j, "top level");
  check_keys(j, "", {"seed", "model", "optimizer", "data", "decode"});
  RunConfig c;
  read_field(j, "", "seed", c.seed);
  if (j.contains("model")) c.model = model_from_obj(j.at("model"), "model");
  if (j.contains("optimizer")) c.optimizer = optimizer_from_obj(j.at("optimizer"), "optimizer");
  if (j.contains("data")) c.data = data_from_obj(j.at("data"), "data");
  if (j.contains("decode")) c.decode = decode_from_obj(j.at("decode"), "decode");
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("config: cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
  json j{{"seed", seed},
         {"model", model_to_obj(model)},
         {"optimizer", optimizer_to_obj(optimizer)},
         {"data", data_to_obj(data)},
         {"decode", decode_to_obj(decode)}};
  return j.dump();
}

void RunConfig::validate() const {
  model.validate();
  optimizer.validate();
  data.validate();
  decode.validate();
}

std::string config_to_json(const GicConfig& cfg) { return model_to_obj(cfg).dump(); }

GicConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    bad(std::string("invalid JSON: ") + e.what());
  }
  return model_from_obj(j, "model");
}

std::string optimizer_to_json(const OptimizerConfig& cfg) { return optimizer_to_obj(cfg).dump(); }

Dataset load_dataset_from_manifest(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.vocab = Vocabulary::load((fs::path(manifest_path).parent_path() / "vocab.txt").string());
  ds.utts = load_manifest(manifest_path, ds.vocab);
  return ds;
}

}  // namespace gic
