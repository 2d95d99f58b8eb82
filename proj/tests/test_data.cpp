#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "gic/data.hpp"

using namespace gic;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("gic_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

Matrix random_f32_matrix(int rows, int cols, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  Matrix m(rows, cols);
  for (double& v : m.data) v = static_cast<double>(static_cast<float>(dist(rng)));
  return m;
}

}  // namespace

TEST_CASE("vocabulary: ids, encode/decode, file round trip") {
  Vocabulary v = Vocabulary::build_synth(5);
  CHECK(v.size() == 5);
  CHECK(v.token(0) == "<blk>");
  CHECK(v.token(1) == "a");
  CHECK(v.id("d") == 4);
  std::vector<int> ids = v.encode("adcb");
  CHECK(ids == std::vector<int>{1, 4, 3, 2});
  CHECK(v.decode(ids) == "adcb");
  CHECK_THROWS_AS(v.encode("ax"), DataError);  // x not in a 5-token vocab
  CHECK_THROWS_AS(v.decode({0}), DataError);
  CHECK_THROWS_AS(v.id("zz"), DataError);

  fs::path dir = temp_dir("vocab");
  v.save((dir / "vocab.txt").string());
  Vocabulary w = Vocabulary::load((dir / "vocab.txt").string());
  CHECK(v == w);

  std::ofstream bad(dir / "bad.txt");
  bad << "a\nb\n";
  bad.close();
  CHECK_THROWS_AS(Vocabulary::load((dir / "bad.txt").string()), DataError);
  CHECK_THROWS_AS(Vocabulary::build_synth(1), ConfigError);
  CHECK_THROWS_AS(Vocabulary::build_synth(99), ConfigError);
}

TEST_CASE("feature file: bit-exact round trip and header validation") {
  fs::path dir = temp_dir("feat");
  Matrix m = random_f32_matrix(7, 5, 123);
  std::string path = (dir / "a.fea").string();
  write_features(path, m);
  Matrix r = read_features(path);
  CHECK(r.rows == 7);
  CHECK(r.cols == 5);
  CHECK(r.data == m.data);

  // identical bytes when rewritten
  std::string path2 = (dir / "b.fea").string();
  write_features(path2, r);
  CHECK(slurp(path) == slurp(path2));

  std::string bytes = slurp(path);
  std::ofstream(dir / "trunc.fea", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(read_features((dir / "trunc.fea").string()), DataError);

  std::string wrong = bytes;
  wrong[0] = 'X';
  std::ofstream(dir / "magic.fea", std::ios::binary) << wrong;
  CHECK_THROWS_AS(read_features((dir / "magic.fea").string()), DataError);

  CHECK_THROWS_AS(read_features((dir / "missing.fea").string()), DataError);
}

TEST_CASE("synth: determinism down to dataset bytes") {
  SynthParams p;
  p.seed = 42;
  p.n_utts = 6;
  p.vocab_size = 6;
  p.noise_std = 0.1;
  Dataset a = synth_generate(p);
  Dataset b = synth_generate(p);
  REQUIRE(a.utts.size() == 6);
  for (size_t i = 0; i < a.utts.size(); ++i) {
    CHECK(a.utts[i].id == b.utts[i].id);
    CHECK(a.utts[i].transcript == b.utts[i].transcript);
    CHECK(a.utts[i].features.data == b.utts[i].features.data);
  }

  fs::path da = temp_dir("synth_a"), db = temp_dir("synth_b");
  write_dataset(a, da.string());
  write_dataset(b, db.string());
  CHECK(slurp(da / "manifest.tsv") == slurp(db / "manifest.tsv"));
  CHECK(slurp(da / "vocab.txt") == slurp(db / "vocab.txt"));
  for (const Utterance& u : a.utts)
    CHECK(slurp(da / "feats" / (u.id + ".fea")) == slurp(db / "feats" / (u.id + ".fea")));

  p.seed = 43;
  Dataset c = synth_generate(p);
  bool all_same = true;
  for (size_t i = 0; i < a.utts.size(); ++i)
    all_same = all_same && a.utts[i].transcript == c.utts[i].transcript &&
               a.utts[i].features.data == c.utts[i].features.data;
  CHECK_FALSE(all_same);
}

TEST_CASE("synth: zero noise emits exact pattern rows, no adjacent repeats") {
  SynthParams p;
  p.seed = 7;
  p.n_utts = 20;
  p.vocab_size = 5;
  p.min_len = 2;
  p.max_len = 7;
  p.frames_per_token = 3;
  p.noise_std = 0.0;
  p.d_feat = 6;
  Dataset ds = synth_generate(p);
  Matrix pat = synth_patterns(p.seed, p.vocab_size, p.d_feat);
  REQUIRE(pat.rows == 4);

  for (const Utterance& u : ds.utts) {
    REQUIRE(u.features.rows == static_cast<int>(u.transcript.size()) * 3);
    for (size_t i = 0; i + 1 < u.transcript.size(); ++i)
      CHECK(u.transcript[i] != u.transcript[i + 1]);
    int row = 0;
    for (int tok : u.transcript) {
      CHECK(tok >= 1);
      CHECK(tok < 5);
      for (int k = 0; k < 3; ++k, ++row)
        for (int c = 0; c < 6; ++c) CHECK(u.features.at(row, c) == pat.at(tok - 1, c));
    }
  }
}

TEST_CASE("synth: nearest-pattern frame classifier recovers transcripts") {
  SynthParams p;
  p.seed = 11;
  p.n_utts = 30;
  p.vocab_size = 8;
  p.min_len = 2;
  p.max_len = 8;
  p.frames_per_token = 4;
  p.noise_std = 0.0;
  p.d_feat = 10;
  Dataset ds = synth_generate(p);
  Matrix pat = synth_patterns(p.seed, p.vocab_size, p.d_feat);

  for (const Utterance& u : ds.utts) {
    std::vector<int> frame_tokens;
    for (int t = 0; t < u.features.rows; ++t) {
      int best = -1;
      double best_d = kPosInf;
      for (int r = 0; r < pat.rows; ++r) {
        double d = 0.0;
        for (int c = 0; c < pat.cols; ++c) {
          double diff = u.features.at(t, c) - pat.at(r, c);
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = r + 1;
        }
      }
      frame_tokens.push_back(best);
    }
    CHECK(collapse(frame_tokens, kBlank) == u.transcript);
  }
}

TEST_CASE("manifest: round trip preserves utterances exactly") {
  SynthParams p;
  p.seed = 3;
  p.n_utts = 5;
  p.vocab_size = 7;
  Dataset ds = synth_generate(p);
  fs::path dir = temp_dir("roundtrip");
  write_dataset(ds, dir.string());
  Dataset back = load_dataset(dir.string());
  CHECK(back.vocab == ds.vocab);
  REQUIRE(back.utts.size() == ds.utts.size());
  for (size_t i = 0; i < ds.utts.size(); ++i) {
    CHECK(back.utts[i].id == ds.utts[i].id);
    CHECK(back.utts[i].transcript == ds.utts[i].transcript);
    CHECK(back.utts[i].features.rows == ds.utts[i].features.rows);
    CHECK(back.utts[i].features.data == ds.utts[i].features.data);
  }
}

TEST_CASE("manifest: structural errors are rejected with the offending row") {
  fs::path dir = temp_dir("badmanifest");
  Vocabulary v = Vocabulary::build_synth(4);
  v.save((dir / "vocab.txt").string());
  Matrix m = random_f32_matrix(4, 3, 9);
  write_features((dir / "x.fea").string(), m);

  auto write_manifest = [&](const std::string& body) {
    std::ofstream f(dir / "manifest.tsv", std::ios::binary);
    f << body;
  };

  write_manifest("u1\tx.fea\tab\nu1\tx.fea\tba\n");
  try {
    load_dataset(dir.string());
    FAIL("duplicate id accepted");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
  }

  write_manifest("u1\tx.fea\tab\nu2\tnope.fea\tba\n");
  try {
    load_dataset(dir.string());
    FAIL("missing feature file accepted");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("u2") != std::string::npos);
    CHECK(std::string(e.what()).find("nope.fea") != std::string::npos);
  }

  write_manifest("u1\tx.fea\n");
  CHECK_THROWS_AS(load_dataset(dir.string()), DataError);

  write_manifest("u1\tx.fea\taq\n");  // q outside vocab
  CHECK_THROWS_AS(load_dataset(dir.string()), DataError);

  write_manifest("u1\tx.fea\tab\n\nu2\tx.fea\tba\n");  // blank line skipped, relative path reused
  Dataset ok = load_dataset(dir.string());
  CHECK(ok.utts.size() == 2);
}

TEST_CASE("batching: sizes, padding, and determinism") {
  SynthParams p;
  p.seed = 21;
  p.n_utts = 10;
  p.vocab_size = 6;
  p.min_len = 1;
  p.max_len = 6;
  p.frames_per_token = 2;
  Dataset ds = synth_generate(p);

  SUBCASE("batch_size one is unpadded") {
    auto batches = make_batches(ds, 1, false, 5);
    REQUIRE(batches.size() == 10);
    for (const Batch& b : batches) {
      REQUIRE(b.utt_index.size() == 1);
      const Utterance& u = ds.utts[b.utt_index[0]];
      CHECK(b.t_max == u.features.rows);
      CHECK(b.features[0].data == u.features.data);
      CHECK(b.labels[0] == u.transcript);
      CHECK(b.label_lengths[0] == static_cast<int>(u.transcript.size()));
    }
  }

  SUBCASE("padding is zero-filled and lengths are respected") {
    auto batches = make_batches(ds, 4, false, 5);
    size_t covered = 0;
    for (const Batch& b : batches) {
      for (size_t i = 0; i < b.utt_index.size(); ++i, ++covered) {
        const Utterance& u = ds.utts[b.utt_index[i]];
        CHECK(b.lengths[i] == u.features.rows);
        CHECK(b.features[i].rows == b.t_max);
        for (int r = 0; r < b.lengths[i]; ++r)
          for (int c = 0; c < u.features.cols; ++c)
            CHECK(b.features[i].at(r, c) == u.features.at(r, c));
        for (int r = b.lengths[i]; r < b.t_max; ++r)
          for (int c = 0; c < u.features.cols; ++c) CHECK(b.features[i].at(r, c) == 0.0);
      }
    }
    CHECK(covered == ds.utts.size());
  }

  SUBCASE("equal lengths mean no padding") {
    SynthParams q = p;
    q.min_len = 3;
    q.max_len = 3;
    Dataset eq = synth_generate(q);
    for (const Batch& b : make_batches(eq, 4, false, 5))
      for (int len : b.lengths) CHECK(len == b.t_max);
  }

  SUBCASE("sorted batching is non-increasing in length") {
    auto batches = make_batches(ds, 3, true, 0);
    int prev = 1 << 30;
    for (const Batch& b : batches)
      for (int len : b.lengths) {
        CHECK(len <= prev);
        prev = len;
      }
  }

  SUBCASE("shuffle is seed-deterministic and covers every utterance") {
    auto a = make_batches(ds, 3, false, 9);
    auto b = make_batches(ds, 3, false, 9);
    auto c = make_batches(ds, 3, false, 10);
    REQUIRE(a.size() == b.size());
    std::vector<int> flat_a, flat_c;
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].utt_index == b[i].utt_index);
      flat_a.insert(flat_a.end(), a[i].utt_index.begin(), a[i].utt_index.end());
    }
    for (const Batch& bc : c)
      flat_c.insert(flat_c.end(), bc.utt_index.begin(), bc.utt_index.end());
    CHECK(flat_a != flat_c);
    std::sort(flat_a.begin(), flat_a.end());
    std::sort(flat_c.begin(), flat_c.end());
    for (int i = 0; i < 10; ++i) {
      CHECK(flat_a[i] == i);
      CHECK(flat_c[i] == i);
    }
  }
}

TEST_CASE("aggregate_cer: hand values and per-utterance recomputation") {
  std::vector<std::vector<int>> refs = {{1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}};
  CHECK(aggregate_cer(refs, refs).rate() == 0.0);
  CHECK(aggregate_cer(refs, refs).counts.total() == 0);

  // one substitution over ten reference tokens
  std::vector<std::vector<int>> hyps = {{1, 2, 3, 4, 5}, {1, 2, 9, 4, 5}};
  CorpusErrors e = aggregate_cer(refs, hyps);
  CHECK(e.ref_len == 10);
  CHECK(e.counts.substitutions == 1);
  CHECK(e.rate() == doctest::Approx(0.1));

  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> len(0, 6), tok(1, 4);
  std::vector<std::vector<int>> r2, h2;
  for (int i = 0; i < 40; ++i) {
    std::vector<int> a(len(rng)), b(len(rng));
    for (int& x : a) x = tok(rng);
    for (int& x : b) x = tok(rng);
    r2.push_back(a);
    h2.push_back(b);
  }
  CorpusErrors agg = aggregate_cer(r2, h2);
  EditCounts sum;
  int64_t ref_len = 0;
  for (int i = 0; i < 40; ++i) {
    EditCounts e1 = edit_distance(r2[i], h2[i]);
    sum.substitutions += e1.substitutions;
    sum.insertions += e1.insertions;
    sum.deletions += e1.deletions;
    ref_len += static_cast<int64_t>(r2[i].size());
  }
  CHECK(agg.counts.substitutions == sum.substitutions);
  CHECK(agg.counts.insertions == sum.insertions);
  CHECK(agg.counts.deletions == sum.deletions);
  CHECK(agg.ref_len == ref_len);

  r2.pop_back();
  CHECK_THROWS_AS(aggregate_cer(r2, h2), DataError);
}
