#include "gic/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace gic {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Vocabulary

static const char* kBlankToken = "<blk>";
static const char* kSynthAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789";

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) throw DataError("vocabulary: empty token list");
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
    if (tokens_[i].empty()) throw DataError("vocabulary: empty token string");
    if (!index_.emplace(tokens_[i], i).second)
      throw DataError("vocabulary: duplicate token " + tokens_[i]);
  }
}

Vocabulary Vocabulary::build_synth(int vocab_size) {
  int alphabet = static_cast<int>(std::string(kSynthAlphabet).size());
  if (vocab_size < 2) throw ConfigError("vocabulary: need blank plus at least one token");
  if (vocab_size - 1 > alphabet)
    throw ConfigError("vocabulary: synth alphabet supports at most " +
                      std::to_string(alphabet + 1) + " tokens");
  std::vector<std::string> toks = {kBlankToken};
  for (int i = 0; i + 1 < vocab_size; ++i) toks.push_back(std::string(1, kSynthAlphabet[i]));
  return Vocabulary(std::move(toks));
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw DataError("vocabulary: token id out of range");
  return tokens_[id];
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw DataError("vocabulary: unknown token " + token);
  return it->second;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) {
    int tid = id(std::string(1, c));
    if (tid == kBlank) throw DataError("vocabulary: blank token in transcript");
    ids.push_back(tid);
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int tid : ids) {
    if (tid == kBlank) throw DataError("vocabulary: blank token in label sequence");
    out += token(tid);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("vocabulary: cannot write " + path);
  for (const std::string& t : tokens_) f << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("vocabulary: cannot read " + path);
  std::vector<std::string> toks;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) toks.push_back(line);
  }
  if (toks.empty() || toks[0] != kBlankToken)
    throw DataError("vocabulary: " + path + " must start with " + kBlankToken);
  return Vocabulary(std::move(toks));
}

// ---------------------------------------------------------------------------
// Feature files

static const char kFeatMagic[] = "GICFEAT";
static const uint8_t kFeatVersion = 1;

static void put_u32_le(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

static uint32_t get_u32_le(const std::string& s, size_t pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(s[pos + i])) << (8 * i);
  return v;
}

void write_features(const std::string& path, const Matrix& m) {
  std::string out(kFeatMagic, 7);
  out.push_back(static_cast<char>(kFeatVersion));
  put_u32_le(out, static_cast<uint32_t>(m.rows));
  put_u32_le(out, static_cast<uint32_t>(m.cols));
  for (double v : m.data) {
    uint32_t bits = std::bit_cast<uint32_t>(static_cast<float>(v));
    put_u32_le(out, bits);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("features: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("features: write failed for " + path);
}

Matrix read_features(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("features: cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  std::string s = ss.str();
  if (s.size() < 16 || s.compare(0, 7, kFeatMagic) != 0)
    throw DataError("features: bad header in " + path);
  if (static_cast<uint8_t>(s[7]) != kFeatVersion)
    throw DataError("features: unsupported version in " + path);
  uint32_t rows = get_u32_le(s, 8), cols = get_u32_le(s, 12);
  size_t expect = 16 + static_cast<size_t>(rows) * cols * 4;
  if (s.size() != expect) throw DataError("features: size mismatch in " + path);
  Matrix m(static_cast<int>(rows), static_cast<int>(cols));
  for (size_t i = 0; i < m.size(); ++i) {
    uint32_t bits = get_u32_le(s, 16 + i * 4);
    m.data[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Manifest and dataset directory

void write_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "feats");
  ds.vocab.save((fs::path(dir) / "vocab.txt").string());
  std::ofstream mf(fs::path(dir) / "manifest.tsv", std::ios::binary);
  if (!mf) throw DataError("dataset: cannot write manifest in " + dir);
  for (const Utterance& u : ds.utts) {
    std::string rel = "feats/" + u.id + ".fea";
    write_features((fs::path(dir) / rel).string(), u.features);
    mf << u.id << '\t' << rel << '\t' << ds.vocab.decode(u.transcript) << '\n';
  }
}

std::vector<Utterance> load_manifest(const std::string& manifest_path, const Vocabulary& vocab) {
  std::ifstream f(manifest_path, std::ios::binary);
  if (!f) throw DataError("manifest: cannot read " + manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();
  std::vector<Utterance> utts;
  std::map<std::string, int> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string where = "manifest row " + std::to_string(lineno);
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw DataError(where + ": expected 3 tab-separated fields");
    Utterance u;
    u.id = line.substr(0, t1);
    std::string rel = line.substr(t1 + 1, t2 - t1 - 1);
    std::string text = line.substr(t2 + 1);
    if (u.id.empty()) throw DataError(where + ": empty utterance id");
    if (!seen.emplace(u.id, lineno).second)
      throw DataError(where + ": duplicate utterance id " + u.id);
    fs::path feat = fs::path(rel).is_absolute() ? fs::path(rel) : base / rel;
    if (!fs::exists(feat))
      throw DataError(where + " (" + u.id + "): missing feature file " + feat.string());
    u.features = read_features(feat.string());
    if (u.features.rows < 1) throw DataError(where + " (" + u.id + "): empty feature matrix");
    u.transcript = vocab.encode(text);
    utts.push_back(std::move(u));
  }
  return utts;
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.vocab = Vocabulary::load((fs::path(dir) / "vocab.txt").string());
  ds.utts = load_manifest((fs::path(dir) / "manifest.tsv").string(), ds.vocab);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data

Matrix synth_patterns(uint64_t seed, int vocab_size, int d_feat) {
  std::mt19937_64 rng(mix_seed(seed, "patterns"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix pat(vocab_size - 1, d_feat);
  for (int r = 0; r < pat.rows; ++r) {
    double norm2 = 0.0;
    for (int c = 0; c < d_feat; ++c) {
      double v = gauss(rng);
      pat.at(r, c) = v;
      norm2 += v * v;
    }
    double inv = 1.0 / std::sqrt(norm2);
    // store as float32 so feature files round-trip bit-exactly
    for (int c = 0; c < d_feat; ++c)
      pat.at(r, c) = static_cast<double>(static_cast<float>(pat.at(r, c) * inv));
  }
  return pat;
}

Dataset synth_generate(const SynthParams& p) {
  if (p.vocab_size < 2) throw ConfigError("synth: vocab_size must be at least 2");
  if (p.n_utts < 1) throw ConfigError("synth: n_utts must be positive");
  if (p.min_len < 1 || p.max_len < p.min_len) throw ConfigError("synth: bad length range");
  if (p.frames_per_token < 1) throw ConfigError("synth: frames_per_token must be positive");
  if (p.noise_std < 0.0) throw ConfigError("synth: noise_std must be nonnegative");
  if (p.d_feat < 1) throw ConfigError("synth: d_feat must be positive");

  Dataset ds;
  ds.vocab = Vocabulary::build_synth(p.vocab_size);
  Matrix pat = synth_patterns(p.seed, p.vocab_size, p.d_feat);

  int width = static_cast<int>(std::to_string(p.n_utts - 1).size());
  for (int u = 0; u < p.n_utts; ++u) {
    std::mt19937_64 rng(mix_seed(p.seed, "utt:" + std::to_string(u)));
    std::uniform_int_distribution<int> len_dist(p.min_len, p.max_len);
    std::uniform_int_distribution<int> tok_dist(1, p.vocab_size - 1);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Utterance utt;
    std::string num = std::to_string(u);
    utt.id = "u" + std::string(width - static_cast<int>(num.size()), '0') + num;

    int len = len_dist(rng);
    utt.transcript.reserve(len);
    for (int i = 0; i < len; ++i) {
      int tok = tok_dist(rng);
      // adjacent repeats would be merged by framewise collapse; redraw
      while (p.vocab_size > 2 && !utt.transcript.empty() && tok == utt.transcript.back())
        tok = tok_dist(rng);
      utt.transcript.push_back(tok);
    }

    utt.features = Matrix(len * p.frames_per_token, p.d_feat);
    int row = 0;
    for (int tok : utt.transcript)
      for (int k = 0; k < p.frames_per_token; ++k, ++row)
        for (int c = 0; c < p.d_feat; ++c) {
          double v = pat.at(tok - 1, c) + p.noise_std * gauss(rng);
          utt.features.at(row, c) = static_cast<double>(static_cast<float>(v));
        }
    ds.utts.push_back(std::move(utt));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<Batch> make_batches(const Dataset& ds, int batch_size, bool sort_by_length,
                                uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batching: batch_size must be positive");
  std::vector<int> order(ds.utts.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  if (sort_by_length) {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return ds.utts[a].features.rows > ds.utts[b].features.rows;
    });
  } else {
    std::mt19937_64 rng(mix_seed(seed, "batch"));
    std::shuffle(order.begin(), order.end(), rng);
  }

  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += batch_size) {
    size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    for (size_t i = start; i < end; ++i) {
      const Utterance& u = ds.utts[order[i]];
      b.utt_index.push_back(order[i]);
      b.lengths.push_back(u.features.rows);
      b.labels.push_back(u.transcript);
      b.label_lengths.push_back(static_cast<int>(u.transcript.size()));
      b.t_max = std::max(b.t_max, u.features.rows);
    }
    for (size_t i = start; i < end; ++i) {
      const Matrix& src = ds.utts[order[i]].features;
      Matrix padded(b.t_max, src.cols);  // zero-filled
      std::copy(src.data.begin(), src.data.end(), padded.data.begin());
      b.features.push_back(std::move(padded));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Corpus metrics

CorpusErrors aggregate_cer(const std::vector<std::vector<int>>& refs,
                           const std::vector<std::vector<int>>& hyps) {
  if (refs.size() != hyps.size())
    throw DataError("aggregate_cer: reference and hypothesis counts differ");
  CorpusErrors out;
  for (size_t i = 0; i < refs.size(); ++i) {
    EditCounts e = edit_distance(refs[i], hyps[i]);
    out.counts.substitutions += e.substitutions;
    out.counts.insertions += e.insertions;
    out.counts.deletions += e.deletions;
    out.ref_len += static_cast<int64_t>(refs[i].size());
  }
  return out;
}

}  // namespace gic
