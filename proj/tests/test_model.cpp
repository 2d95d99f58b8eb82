#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "gic/data.hpp"
#include "gic/model.hpp"
#include "support/gradcheck.hpp"

using namespace gic;
using gic::testsupport::grad_check;

namespace {

GicConfig tiny_config() {
  GicConfig cfg;
  cfg.backbone = Backbone::kTransformer;
  cfg.layers = 2;
  cfg.taps = 1;
  cfg.lambda = 0.5;
  cfg.d_model = 4;
  cfg.heads = 2;
  cfg.d_ff = 8;
  cfg.vocab_size = 4;
  cfg.d_feat = 3;
  cfg.dropout = 0.0;
  return cfg;
}

Matrix random_features(int T, int d, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix m(T, d);
  for (double& v : m.data) v = dist(rng);
  return m;
}

Parameter rand_param(const std::string& name, Shape shape, uint64_t seed) {
  Parameter p(name, shape);
  std::mt19937_64 rng(mix_seed(seed, name));
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& v : p.value) v = dist(rng);
  return p;
}

}  // namespace

TEST_CASE("tap layer indices") {
  CHECK(tap_layer_indices(18, 5) == std::vector<int>{3, 6, 9, 12, 15});
  CHECK(tap_layer_indices(6, 2) == std::vector<int>{2, 4});
  CHECK(tap_layer_indices(6, 1) == std::vector<int>{3});
  CHECK(tap_layer_indices(2, 1) == std::vector<int>{1});
  CHECK(tap_layer_indices(5, 0).empty());
  CHECK_THROWS_AS(tap_layer_indices(6, 6), ConfigError);
  CHECK_THROWS_AS(tap_layer_indices(6, -1), ConfigError);
  for (int L = 2; L <= 24; ++L)
    for (int K = 1; K <= L - 1; ++K) {
      std::vector<int> t = tap_layer_indices(L, K);
      REQUIRE(static_cast<int>(t.size()) == K);
      CHECK(t.front() >= 1);
      CHECK(t.back() <= L - 1);
      for (size_t i = 1; i < t.size(); ++i) CHECK(t[i] > t[i - 1]);
    }
}

TEST_CASE("total loss combination") {
  CHECK(total_loss(2.0, {4.0, 6.0}, 0.5) == 3.5);
  CHECK(total_loss(7.25, {}, 0.9) == 7.25);
  CHECK(total_loss(7.25, {1.0, 2.0, 3.0}, 0.0) == 7.25);
  CHECK(total_loss(2.0, {2.0, 2.0, 2.0, 2.0, 2.0}, 0.5) == 2.0);
  double c = 1.372913;
  CHECK(total_loss(c, {c, c, c, c, c}, 0.5) == doctest::Approx(c).epsilon(1e-12));
  CHECK(total_loss(1.5, {4.0, 2.0, 9.0}, 0.3) ==
        doctest::Approx(total_loss(1.5, {9.0, 4.0, 2.0}, 0.3)).epsilon(1e-12));
  CHECK_THROWS_AS(total_loss(1.0, {1.0}, -0.1), ConfigError);
  CHECK_THROWS_AS(total_loss(1.0, {1.0}, 1.1), ConfigError);
}

TEST_CASE("config validation") {
  GicConfig cfg = tiny_config();
  cfg.validate();
  GicConfig bad = cfg;
  bad.taps = 2;  // needs taps <= layers-1
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.lambda = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.backbone = Backbone::kConformer;
  bad.conv_kernel = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(backbone_from_string("conformer") == Backbone::kConformer);
  CHECK(backbone_to_string(Backbone::kTransformer) == "transformer");
  CHECK_THROWS_AS(backbone_from_string("rnn"), ConfigError);
}

TEST_CASE("vocab head: zero state and projection give uniform soft labels") {
  ParamStore ps(4);
  VocabHead head(ps, "h", 4, 5);
  std::fill(head.w->value.begin(), head.w->value.end(), 0.0);
  Tape tape;
  Tensor h = tape.constant({3, 4}, std::vector<double>(12, 0.0));
  Tensor q = softmax(head.logits(tape, h), 1);
  for (int i = 0; i < q.size(); ++i) CHECK(q.values()[i] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("vocab head: rows are distributions and match the op composition bitwise") {
  ParamStore ps(5);
  VocabHead head(ps, "h", 6, 4);
  Parameter hid = rand_param("hid", {5, 6}, 77);
  Tape tape;
  Tensor h = tape.param(hid);
  Tensor q = softmax(head.logits(tape, h), 1);
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int c = 0; c < 4; ++c) s += q(r, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }

  Tensor manual = softmax(
      linear(layer_norm(h, tape.param(*head.ln.gain), tape.param(*head.ln.bias)),
             tape.param(*head.w), tape.param(*head.b)),
      1);
  CHECK(q.values() == manual.values());
}

TEST_CASE("textual embedding: one-hot, uniform, loop oracle, linearity") {
  Tape tape;
  Parameter embp = rand_param("emb", {4, 3}, 88);
  Tensor emb = tape.param(embp);

  Tensor onehot = tape.constant({2, 4}, {0, 0, 1, 0, 1, 0, 0, 0});
  Tensor e1 = textual_embedding(onehot, emb);
  for (int c = 0; c < 3; ++c) {
    CHECK(e1(0, c) == embp.value[2 * 3 + c]);
    CHECK(e1(1, c) == embp.value[0 * 3 + c]);
  }

  Tensor uniform = tape.constant({1, 4}, std::vector<double>(4, 0.25));
  Tensor e2 = textual_embedding(uniform, emb);
  for (int c = 0; c < 3; ++c) {
    double hand = 0.0;
    for (int r = 0; r < 4; ++r) hand += 0.25 * embp.value[r * 3 + c];
    CHECK(e2(0, c) == hand);
  }

  Parameter qp = rand_param("q", {3, 4}, 89);
  Tensor q = tape.param(qp);
  Tensor e3 = textual_embedding(q, emb);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double hand = 0.0;
      for (int k = 0; k < 4; ++k) hand += qp.value[r * 4 + k] * embp.value[k * 3 + c];
      CHECK(e3(r, c) == hand);
    }

  // linearity in q
  Parameter q2p = rand_param("q2", {3, 4}, 90);
  double alpha = 0.3;
  std::vector<double> mixed(12);
  for (int i = 0; i < 12; ++i) mixed[i] = alpha * qp.value[i] + (1 - alpha) * q2p.value[i];
  Tensor em = textual_embedding(tape.constant({3, 4}, mixed), emb);
  Tensor ea = textual_embedding(q, emb);
  Tensor eb = textual_embedding(tape.param(q2p), emb);
  for (int i = 0; i < em.size(); ++i)
    CHECK(em.values()[i] ==
          doctest::Approx(alpha * ea.values()[i] + (1 - alpha) * eb.values()[i]).epsilon(1e-12));

  CHECK_THROWS_AS(textual_embedding(tape.constant({2, 3}, std::vector<double>(6, 0.1)), emb),
                  ShapeError);
}

TEST_CASE("gate fuse: saturation, midpoint, convexity") {
  ParamStore ps(6);
  GateParams gate(ps, "g", 4);
  Parameter hp = rand_param("h", {5, 4}, 91);
  Parameter ep = rand_param("e", {5, 4}, 92);

  SUBCASE("bias +50 passes h through exactly") {
    std::fill(gate.w1->value.begin(), gate.w1->value.end(), 0.0);
    std::fill(gate.w2->value.begin(), gate.w2->value.end(), 0.0);
    std::fill(gate.b->value.begin(), gate.b->value.end(), 50.0);
    Tape tape;
    Tensor out = gate_fuse(tape, tape.param(hp), tape.param(ep), gate);
    CHECK(out.values() == hp.value);
  }

  SUBCASE("zero parameters give exact midpoint") {
    std::fill(gate.w1->value.begin(), gate.w1->value.end(), 0.0);
    std::fill(gate.w2->value.begin(), gate.w2->value.end(), 0.0);
    std::fill(gate.b->value.begin(), gate.b->value.end(), 0.0);
    Tape tape;
    Tensor out = gate_fuse(tape, tape.param(hp), tape.param(ep), gate);
    Tensor mid = scale(add(tape.param(hp), tape.param(ep)), 0.5);
    CHECK(out.values() == mid.values());
  }

  SUBCASE("output is elementwise between h and e") {
    Tape tape;
    Tensor out = gate_fuse(tape, tape.param(hp), tape.param(ep), gate);
    for (int i = 0; i < out.size(); ++i) {
      double lo = std::min(hp.value[i], ep.value[i]);
      double hi = std::max(hp.value[i], ep.value[i]);
      CHECK(out.values()[i] >= lo - 1e-15);
      CHECK(out.values()[i] <= hi + 1e-15);
    }
  }
}

TEST_CASE("model forward: shapes, taps, and row-stochastic posteriors") {
  for (Backbone bb : {Backbone::kTransformer, Backbone::kConformer}) {
    GicConfig cfg = tiny_config();
    cfg.backbone = bb;
    cfg.conv_kernel = 3;
    cfg.layers = 3;
    cfg.taps = 2;
    GicModel model(cfg, 11);
    CHECK(model.tap_layers() == std::vector<int>{1, 2});

    Matrix feats = random_features(10, 3, 101);
    std::vector<int> labels = {1, 2};
    Tape tape;
    ModelOutput out = model.forward(tape, feats, feats.rows, &labels, FwdOpts{});
    CHECK(out.valid == 3);  // ceil(10/4)
    CHECK(out.final_posterior.rows == 3);
    CHECK(out.final_posterior.cols == 4);
    REQUIRE(out.taps.size() == 2);
    for (const TapOutput& tp : out.taps) {
      CHECK(tp.posterior.rows == 3);
      CHECK(tp.fused.rows == 3);
      CHECK(tp.fused.cols == 4);
      for (int r = 0; r < tp.posterior.rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < tp.posterior.cols; ++c) s += tp.posterior.at(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
    REQUIRE(out.feasible);
    CHECK(std::isfinite(out.loss));
    CHECK(out.loss ==
          total_loss(out.final_loss, {out.taps[0].loss, out.taps[1].loss}, cfg.lambda));
  }
}

TEST_CASE("ablation wiring: parameter sets are structurally distinct") {
  GicConfig cfg = tiny_config();

  GicConfig plain = cfg;
  plain.enable_gic = false;
  plain.enable_intermediate_loss = false;
  GicModel mp(plain, 3);
  for (Parameter* p : mp.params().all()) {
    CHECK(p->name.find("tap") == std::string::npos);
    CHECK(p->name != "emb");
  }

  GicConfig inter = cfg;
  inter.enable_gic = false;
  GicModel mi(inter, 3);
  bool has_tap_head = false;
  for (Parameter* p : mi.params().all()) {
    has_tap_head = has_tap_head || p->name.find("tap1.proj") == 0;
    CHECK(p->name.find(".gate.") == std::string::npos);
    CHECK(p->name != "emb");
  }
  CHECK(has_tap_head);

  GicModel mg(cfg, 3);
  CHECK(mg.params().has("emb"));
  CHECK(mg.params().has("tap1.gate.w1"));
  CHECK(mg.params().has("tap1.gate.b"));
  CHECK(mg.params().find("tap1.gate.b").value[0] == 1.0);

  GicConfig nogate = cfg;
  nogate.enable_gate = false;
  GicModel mn(nogate, 3);
  CHECK(mn.params().has("emb"));
  for (Parameter* p : mn.params().all()) CHECK(p->name.find(".gate.") == std::string::npos);

  GicConfig shared = cfg;
  shared.share_tap_projection = true;
  GicModel ms(shared, 3);
  for (Parameter* p : ms.params().all()) CHECK(p->name.find("tap1.proj") == std::string::npos);
  Matrix feats = random_features(8, 3, 55);
  Tape tape;
  ModelOutput out = ms.forward(tape, feats, feats.rows, nullptr, FwdOpts{});
  CHECK(out.taps.size() == 1);
}

TEST_CASE("ablation degeneracy: disabled flags reproduce the plain encoder") {
  GicConfig off = tiny_config();
  off.enable_gic = false;
  off.enable_intermediate_loss = false;
  GicConfig none = tiny_config();
  none.taps = 0;
  GicModel m_off(off, 9), m_none(none, 9);
  Matrix feats = random_features(12, 3, 66);
  Tape ta, tb;
  ModelOutput a = m_off.forward(ta, feats, feats.rows, nullptr, FwdOpts{});
  ModelOutput b = m_none.forward(tb, feats, feats.rows, nullptr, FwdOpts{});
  CHECK(a.taps.empty());
  CHECK(a.final_posterior.data == b.final_posterior.data);
}

TEST_CASE("gate saturation reproduces the intermediate-ctc forward bit for bit") {
  GicConfig gic = tiny_config();
  GicModel mg(gic, 13);
  ParamStore& ps = mg.params();
  Parameter& w1 = ps.find("tap1.gate.w1");
  Parameter& w2 = ps.find("tap1.gate.w2");
  Parameter& b = ps.find("tap1.gate.b");
  std::fill(w1.value.begin(), w1.value.end(), 0.0);
  std::fill(w2.value.begin(), w2.value.end(), 0.0);
  std::fill(b.value.begin(), b.value.end(), 50.0);

  GicConfig inter = gic;
  inter.enable_gic = false;
  GicModel mi(inter, 13);

  Matrix feats = random_features(9, 3, 67);
  std::vector<int> labels = {1};
  Tape ta, tb;
  ModelOutput a = mg.forward(ta, feats, feats.rows, &labels, FwdOpts{});
  ModelOutput i = mi.forward(tb, feats, feats.rows, &labels, FwdOpts{});
  CHECK(a.final_posterior.data == i.final_posterior.data);
  CHECK(a.final_loss == i.final_loss);
  CHECK(a.taps[0].loss == i.taps[0].loss);
}

TEST_CASE("gradients reach the embedding through the fusion path") {
  GicConfig cfg = tiny_config();
  Matrix feats = random_features(8, 3, 68);
  std::vector<int> labels = {1, 2};

  for (double lambda : {0.5, 0.0}) {
    GicConfig c = cfg;
    c.lambda = lambda;
    GicModel m(c, 17);
    Tape tape;
    ModelOutput out = m.forward(tape, feats, feats.rows, &labels, FwdOpts{});
    REQUIRE(out.feasible);
    m.params().zero_grad_all();
    tape.backward(out.loss_node);
    double emb_norm = 0.0;
    for (double g : m.params().find("emb").grad) emb_norm += std::abs(g);
    CHECK(emb_norm > 0.0);
  }
}

TEST_CASE("stop-gradient flag changes gradients but not the forward pass") {
  GicConfig cfg = tiny_config();
  GicConfig stopped = cfg;
  stopped.stop_gradient_soft_labels = true;
  GicModel a(cfg, 19), b(stopped, 19);
  Matrix feats = random_features(8, 3, 69);
  std::vector<int> labels = {2};

  Tape ta, tb;
  ModelOutput oa = a.forward(ta, feats, feats.rows, &labels, FwdOpts{});
  ModelOutput ob = b.forward(tb, feats, feats.rows, &labels, FwdOpts{});
  CHECK(oa.loss == ob.loss);
  REQUIRE(oa.feasible);
  REQUIRE(ob.feasible);

  a.params().zero_grad_all();
  b.params().zero_grad_all();
  ta.backward(oa.loss_node);
  tb.backward(ob.loss_node);
  CHECK(a.params().find("tap1.proj").grad != b.params().find("tap1.proj").grad);
  CHECK(a.params().find("emb").grad == b.params().find("emb").grad);
}

TEST_CASE("infeasible labels are flagged without a loss node") {
  GicConfig cfg = tiny_config();
  GicModel m(cfg, 23);
  Matrix feats = random_features(8, 3, 70);      // subsamples to 2 frames
  std::vector<int> labels = {1, 2, 3, 1, 2, 3};  // needs 6
  Tape tape;
  ModelOutput out = m.forward(tape, feats, feats.rows, &labels, FwdOpts{});
  CHECK_FALSE(out.feasible);
  CHECK(std::isinf(out.loss));
  CHECK_FALSE(out.loss_node.defined());
}

TEST_CASE("batched padded loss matches unbatched within 1e-9") {
  SynthParams sp;
  sp.seed = 31;
  sp.n_utts = 6;
  sp.vocab_size = 4;
  sp.min_len = 1;
  sp.max_len = 4;
  sp.frames_per_token = 4;
  sp.d_feat = 3;
  Dataset ds = synth_generate(sp);

  GicConfig cfg = tiny_config();
  GicModel m(cfg, 37);
  auto batches = make_batches(ds, 3, false, 7);
  int padded_count = 0;
  for (const Batch& b : batches)
    for (size_t i = 0; i < b.utt_index.size(); ++i) {
      const Utterance& u = ds.utts[b.utt_index[i]];
      Tape tp, tc;
      ModelOutput padded = m.forward(tp, b.features[i], b.lengths[i], &u.transcript, FwdOpts{});
      ModelOutput clean = m.forward(tc, u.features, u.features.rows, &u.transcript, FwdOpts{});
      REQUIRE(padded.feasible == clean.feasible);
      if (!clean.feasible) continue;
      CHECK(padded.loss == doctest::Approx(clean.loss).epsilon(1e-9));
      if (b.lengths[i] < b.t_max) ++padded_count;
    }
  CHECK(padded_count > 0);  // the batches actually exercised padding
}

TEST_CASE("gradcheck: full model total loss for both backbones") {
  for (Backbone bb : {Backbone::kTransformer, Backbone::kConformer}) {
    GicConfig cfg = tiny_config();
    cfg.backbone = bb;
    cfg.conv_kernel = 3;
    GicModel m(cfg, 41);
    Matrix feats = random_features(8, 3, 71);
    std::vector<int> labels = {1, 2};
    auto res = grad_check(
        [&](Tape& t) {
          ModelOutput out = m.forward(t, feats, feats.rows, &labels, FwdOpts{});
          REQUIRE(out.feasible);
          return out.loss_node;
        },
        m.params().all());
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("greedy decode wraps the final posterior") {
  SynthParams sp;
  sp.seed = 43;
  sp.n_utts = 2;
  sp.vocab_size = 4;
  sp.d_feat = 3;
  Dataset ds = synth_generate(sp);
  GicConfig cfg = tiny_config();
  GicModel m(cfg, 47);
  const Utterance& u = ds.utts[0];
  Tape tape;
  ModelOutput out = m.forward(tape, u.features, u.features.rows, nullptr, FwdOpts{});
  CHECK(m.greedy(u.features) == greedy_decode(out.final_posterior));
}
