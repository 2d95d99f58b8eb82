#include "gic/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "gic/binfile.hpp"

namespace gic {

bool NgramModel::in_vocab(int token) const {
  return std::binary_search(vocab.begin(), vocab.end(), token);
}

double NgramModel::prob(const std::vector<int>& context, int token) const {
  if (token != kLmEnd && !in_vocab(token)) {
    throw OovError("ngram: token " + std::to_string(token) + " not in LM vocabulary");
  }
  // normalize the query context: most recent order-1 ids, start-padded
  std::vector<int> ctx(static_cast<size_t>(order - 1), kLmStart);
  const size_t take = std::min(context.size(), static_cast<size_t>(order - 1));
  std::copy(context.end() - take, context.end(), ctx.end() - take);

  double p = 0.0;
  for (int k = order; k >= 1; --k) {
    if (weights[k - 1] == 0.0) continue;
    // fall through to the first order whose context has been seen
    int kk = k;
    double term;
    while (true) {
      if (kk == 1) {
        const auto& uni = counts[0].begin()->second;
        const auto it = uni.find(token);
        const int64_t c = it == uni.end() ? 0 : it->second;
        const int64_t total = totals[0].begin()->second;
        term = static_cast<double>(c + 1) /
               static_cast<double>(total + static_cast<int64_t>(vocab.size()) + 1);
        break;
      }
      const std::vector<int> key(ctx.end() - (kk - 1), ctx.end());
      const auto tot = totals[kk - 1].find(key);
      if (tot == totals[kk - 1].end()) {
        --kk;
        continue;
      }
      const auto& table = counts[kk - 1].at(key);
      const auto it = table.find(token);
      term = it == table.end() ? 0.0
                               : static_cast<double>(it->second) / static_cast<double>(tot->second);
      break;
    }
    p += weights[k - 1] * term;
  }
  return p;
}

double NgramModel::log_prob(const std::vector<int>& context, int token) const {
  const double p = prob(context, token);
  return p > 0.0 ? std::log(p) : kNegInf;
}

std::vector<double> default_lm_weights(int order) {
  if (order == 4) return {0.4, 0.3, 0.2, 0.1};
  return std::vector<double>(order, 1.0 / order);
}

NgramModel lm_train(const std::vector<std::vector<int>>& corpus, int order,
                    const std::vector<double>& weights, std::vector<int> vocab) {
  if (order < 1) throw ConfigError("lm_train: order must be >= 1");
  if (corpus.empty()) throw DataError("lm_train: empty corpus");
  if (static_cast<int>(weights.size()) != order) {
    throw ConfigError("lm_train: need one interpolation weight per order");
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("lm_train: negative interpolation weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("lm_train: weights must sum to 1");

  NgramModel m;
  m.order = order;
  m.weights = weights;
  std::set<int> vocab_set(vocab.begin(), vocab.end());
  for (const auto& sent : corpus) {
    for (int tok : sent) {
      if (tok == kLmStart || tok == kLmEnd) throw DataError("lm_train: sentinel id in corpus");
      vocab_set.insert(tok);
    }
  }
  m.vocab.assign(vocab_set.begin(), vocab_set.end());
  m.counts.resize(order);
  m.totals.resize(order);

  for (const auto& sent : corpus) {
    std::vector<int> padded(static_cast<size_t>(order - 1), kLmStart);
    padded.insert(padded.end(), sent.begin(), sent.end());
    padded.push_back(kLmEnd);
    const size_t n_events = sent.size() + 1;
    for (size_t e = 0; e < n_events; ++e) {
      const size_t pos = e + static_cast<size_t>(order - 1);  // event token position
      const int token = padded[pos];
      for (int k = 1; k <= order; ++k) {
        const std::vector<int> key(padded.begin() + pos - (k - 1), padded.begin() + pos);
        ++m.counts[k - 1][key][token];
        ++m.totals[k - 1][key];
      }
    }
  }
  return m;
}

double lm_log_prob(const NgramModel& model, int token, const std::vector<int>& context) {
  return model.log_prob(context, token);
}

double lm_perplexity(const NgramModel& model, const std::vector<std::vector<int>>& corpus) {
  double nll = 0.0;
  int64_t events = 0;
  for (const auto& sent : corpus) {
    std::vector<int> ctx;
    for (int tok : sent) {
      nll -= model.log_prob(ctx, tok);
      ctx.push_back(tok);
      ++events;
    }
    nll -= model.log_prob(ctx, kLmEnd);
    ++events;
  }
  if (events == 0) throw DataError("lm_perplexity: empty corpus");
  return std::exp(nll / static_cast<double>(events));
}

std::vector<uint8_t> NgramModel::serialize() const {
  BinWriter w("ngram-lm");
  std::vector<uint8_t> meta;
  put_u32(meta, static_cast<uint32_t>(order));
  put_u32(meta, static_cast<uint32_t>(weights.size()));
  for (double x : weights) put_f64(meta, x);
  put_u32(meta, static_cast<uint32_t>(vocab.size()));
  for (int v : vocab) put_i64(meta, v);
  w.add("meta", std::move(meta));

  // std::map iteration order makes the byte stream a pure function of content
  std::vector<uint8_t> body;
  for (int k = 1; k <= order; ++k) {
    put_u64(body, counts[k - 1].size());
    for (const auto& [key, table] : counts[k - 1]) {
      for (int id : key) put_i64(body, id);
      put_u64(body, table.size());
      for (const auto& [token, c] : table) {
        put_i64(body, token);
        put_i64(body, c);
      }
    }
  }
  w.add("counts", std::move(body));
  return w.bytes();
}

NgramModel NgramModel::deserialize(const std::vector<uint8_t>& bytes) {
  BinReader r = BinReader::parse(bytes, "ngram-lm");
  NgramModel m;
  {
    const auto& meta = r.section("meta");
    size_t pos = 0;
    m.order = static_cast<int>(get_u32(meta, pos));
    const uint32_t nw = get_u32(meta, pos);
    for (uint32_t i = 0; i < nw; ++i) m.weights.push_back(get_f64(meta, pos));
    const uint32_t nv = get_u32(meta, pos);
    for (uint32_t i = 0; i < nv; ++i) m.vocab.push_back(static_cast<int>(get_i64(meta, pos)));
  }
  if (m.order < 1 || static_cast<int>(m.weights.size()) != m.order) {
    throw DataError("ngram: corrupt model metadata");
  }
  m.counts.resize(m.order);
  m.totals.resize(m.order);
  const auto& body = r.section("counts");
  size_t pos = 0;
  for (int k = 1; k <= m.order; ++k) {
    const uint64_t n_ctx = get_u64(body, pos);
    for (uint64_t i = 0; i < n_ctx; ++i) {
      std::vector<int> key(static_cast<size_t>(k - 1));
      for (int& id : key) id = static_cast<int>(get_i64(body, pos));
      const uint64_t n_tok = get_u64(body, pos);
      int64_t total = 0;
      auto& table = m.counts[k - 1][key];
      for (uint64_t j = 0; j < n_tok; ++j) {
        const int token = static_cast<int>(get_i64(body, pos));
        const int64_t c = get_i64(body, pos);
        table[token] = c;
        total += c;
      }
      m.totals[k - 1][key] = total;
    }
  }
  return m;
}

void NgramModel::save(const std::string& path) const {
  const auto b = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("ngram: cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!f) throw DataError("ngram: write failed: " + path);
}

NgramModel NgramModel::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("ngram: cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace gic
