#pragma once

#include <cstdint>
#include <string>

#include "gic/data.hpp"
#include "gic/model.hpp"
#include "gic/train.hpp"

namespace gic {

// Where training data comes from: either a manifest pair on disk or an
// in-process synthetic corpus (train split of n_utts plus val_utts held out
// from the same generator). Exactly one source may be configured.
struct DataConfig {
  std::string train_manifest;  // path to manifest.tsv; vocab.txt sits beside it
  std::string val_manifest;
  bool use_synth = false;
  SynthParams synth;
  int val_utts = 0;  // synthetic held-out utterances (synth mode only)
  int batch_size = 8;
  int epochs = 100;
  bool sort_batches = true;

  void validate() const;
};

struct DecodeConfig {
  std::string mode = "greedy";  // "greedy" or "beam"
  int beam = 10;
  std::string lm_path;
  double lm_weight = 0.0;
  double length_bonus = 0.0;

  void validate() const;
};

// Top-level run configuration, parsed strictly from JSON: unknown keys are
// rejected anywhere in the document, absent keys take the documented
// defaults. to_json_text() emits a canonical form that parses back equal.
struct RunConfig {
  uint64_t seed = 1;
  GicConfig model;
  OptimizerConfig optimizer;
  DataConfig data;
  DecodeConfig decode;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  std::string to_json_text() const;
  void validate() const;
};

// Canonical single-line JSON for the section structs; string equality is the
// config-match test used by checkpoints.
std::string config_to_json(const GicConfig& cfg);
GicConfig config_from_json(const std::string& text);
std::string optimizer_to_json(const OptimizerConfig& cfg);

// Loads manifest.tsv via the vocab.txt sitting next to it.
Dataset load_dataset_from_manifest(const std::string& manifest_path);

}  // namespace gic
