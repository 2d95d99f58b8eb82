#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gic/common.hpp"
#include "gic/ctc.hpp"

namespace gic {

// Ordered token strings, blank at index 0. Synthetic vocabularies use single
// ASCII characters so transcripts serialize as plain strings.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);
  static Vocabulary build_synth(int vocab_size);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  int id(const std::string& token) const;  // DataError when unknown
  bool has(const std::string& token) const { return index_.count(token) > 0; }

  // Character tokenization; every byte must be a known non-blank token.
  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

struct Utterance {
  std::string id;
  Matrix features;  // T x d_feat
  std::vector<int> transcript;
};

struct Dataset {
  Vocabulary vocab;
  std::vector<Utterance> utts;
  int d_feat() const { return utts.empty() ? 0 : utts.front().features.cols; }
};

// Feature file: "GICFEAT" magic, version byte 1, u32 rows, u32 cols (little
// endian), then row-major float32. Values round-trip exactly because every
// stored feature is float32-representable.
void write_features(const std::string& path, const Matrix& m);
Matrix read_features(const std::string& path);

// Directory layout: manifest.tsv (utt_id \t feature_path \t transcript),
// vocab.txt (one token per line, blank first), feats/<id>.fea. Feature paths
// are relative to the manifest's directory.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);
std::vector<Utterance> load_manifest(const std::string& manifest_path, const Vocabulary& vocab);

struct SynthParams {
  uint64_t seed = 1;
  int n_utts = 8;
  int vocab_size = 8;  // including blank
  int min_len = 2;
  int max_len = 6;
  int frames_per_token = 4;
  double noise_std = 0.1;
  int d_feat = 16;
};

// Token patterns are L2-normalized Gaussian rows, one per non-blank token.
Matrix synth_patterns(uint64_t seed, int vocab_size, int d_feat);
// Each utterance draws a token sequence without adjacent repeats; every token
// emits frames_per_token noisy copies of its pattern row.
Dataset synth_generate(const SynthParams& p);

struct Batch {
  std::vector<int> utt_index;
  int t_max = 0;
  std::vector<Matrix> features;  // each t_max x d_feat, zero-padded rows
  std::vector<int> lengths;
  std::vector<std::vector<int>> labels;
  std::vector<int> label_lengths;
};

// sort_by_length packs by non-increasing frame count (ties by original
// order); otherwise utterance order is a seeded shuffle.
std::vector<Batch> make_batches(const Dataset& ds, int batch_size, bool sort_by_length,
                                uint64_t seed);

struct CorpusErrors {
  EditCounts counts;
  int64_t ref_len = 0;
  double rate() const { return static_cast<double>(counts.total()) / std::max<int64_t>(1, ref_len); }
};

CorpusErrors aggregate_cer(const std::vector<std::vector<int>>& refs,
                           const std::vector<std::vector<int>>& hyps);

}  // namespace gic
