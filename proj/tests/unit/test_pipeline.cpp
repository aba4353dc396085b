#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "defa/pipeline.hpp"
#include "fixtures.hpp"

using namespace defa;
using defa::testing::stack;
using defa::testing::tiny_config;
using defa::testing::tiny_dataset;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (const auto& e : a.entries()) {
    if (!b.contains(e.name)) return false;
    const Matrix& other = b.value(e.name);
    if (other.rows() != e.value.rows() || other.cols() != e.value.cols()) return false;
    if (!(other.array() == e.value.array()).all()) return false;
  }
  return true;
}

}  // namespace

TEST(ClassificationScores, Examples) {
  const std::vector<Pair> cands{{0, 1}};
  const Matrix sa = row({0.4, 0.1}), so = row({0.9, 0.6}), sc = row({0.5});
  EXPECT_NEAR(classification_scores(sa, so, sc, cands, 0.3)(0, 0), 0.85, 1e-15);
  EXPECT_EQ(classification_scores(sa, so, sc, cands, 1.0)(0, 0), 0.5);
  EXPECT_NEAR(classification_scores(sa, so, sc, cands, 0.0)(0, 0), 1.0, 1e-15);
  EXPECT_THROW(classification_scores(sa, so, row({0.5, 0.2}), cands, 0.3), DimensionError);
}

TEST(ClassificationScores, LambdaOneIsCompositionPath) {
  Rng rng(1);
  const Matrix sa = rng.uniform_matrix(3, 2, 1.0), so = rng.uniform_matrix(3, 3, 1.0);
  const Matrix sc = rng.uniform_matrix(3, 6, 1.0);
  std::vector<Pair> cands;
  for (int a = 0; a < 2; ++a)
    for (int o = 0; o < 3; ++o) cands.push_back({a, o});
  EXPECT_EQ(classification_scores(sa, so, sc, cands, 1.0), sc);
  const Matrix prim = classification_scores(sa, so, sc, cands, 0.0);
  for (int k = 0; k < 6; ++k)
    for (int i = 0; i < 3; ++i) EXPECT_EQ(prim(i, k), sa(i, k / 3) + so(i, k % 3));
}

TEST(ClassificationLoss, EqualScoresGiveLogNc) {
  const Matrix sa = Matrix::Constant(1, 2, 0.3), so = Matrix::Constant(1, 3, 0.3);
  const Matrix sc = Matrix::Constant(1, 6, 0.3);
  const std::vector<int> ta{1}, to{2}, tc{5};
  const double l = classification_loss(sa, so, sc, ta, to, tc, 1.0, 0.5);
  EXPECT_NEAR(l, std::log(6.0), 1e-12);
  EXPECT_NEAR(l, 1.79176, 1e-5);
}

TEST(ClassificationLoss, LambdaOneAndSeparationLimit) {
  Rng rng(2);
  const Matrix sa = rng.uniform_matrix(4, 3, 1.0), so = rng.uniform_matrix(4, 2, 1.0);
  const Matrix sc = rng.uniform_matrix(4, 6, 1.0);
  const std::vector<int> ta{0, 1, 2, 0}, to{1, 0, 1, 1}, tc{1, 2, 5, 1};
  double lc = 0.0;
  for (int i = 0; i < 4; ++i) {
    lc += softmax_ce(std::span<const double>(sc.row(i).data(), 6), tc[i], 0.1);
  }
  EXPECT_NEAR(classification_loss(sa, so, sc, ta, to, tc, 0.1, 1.0), lc / 4.0, 1e-12);
  Matrix a = Matrix::Constant(1, 2, -1.0), o = Matrix::Constant(1, 2, -1.0);
  Matrix c = Matrix::Constant(1, 4, -1.0);
  a(0, 0) = o(0, 1) = c(0, 1) = 1.0;
  const std::vector<int> t0{0}, t1{1};
  EXPECT_LT(classification_loss(a, o, c, t0, t1, t1, 0.01, 0.5), 1e-80);
}

TEST(InferenceScore, Examples) {
  const Matrix cla = row({0.8, 0.2}), pair = row({0.4, 0.9});
  const Matrix s = inference_score(cla, pair, 0.5);
  EXPECT_NEAR(s(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(s(0, 1), 0.55, 1e-15);
  EXPECT_EQ(predict(s), std::vector<int>{0});
  EXPECT_EQ(inference_score(cla, Matrix(), 1.0), cla);
  EXPECT_EQ(predict(inference_score(cla, pair, 0.0)), std::vector<int>{1});
  EXPECT_THROW(inference_score(cla, row({0.1, 0.2, 0.3}), 0.5), DimensionError);
}

TEST(InferenceScore, ArgmaxIgnoresConstantShiftAndTiesGoLow) {
  Rng rng(3);
  const Matrix s = rng.uniform_matrix(20, 7, 1.0);
  const Matrix shifted = (s.array() + 3.25).matrix();
  EXPECT_EQ(predict(s), predict(shifted));
  EXPECT_EQ(predict(row({0.2, 0.7, 0.7, 0.1})), std::vector<int>{1});
}

TEST(TotalLoss, HandExample) {
  LossValues v;
  v.cla = 1.0;
  v.dis = 0.1;
  v.rec = -0.5;
  v.pair = 2.0;
  v.cts = 3.0;
  LossWeights w;
  w.lambda2 = 10.0;
  w.lambda3 = 100.0;
  w.lambda4 = 0.7;
  w.lambda5 = 0.1;
  EXPECT_NEAR(total_loss(v, w), -46.3, 1e-12);
  LossWeights base = w;
  apply_ablation(Ablation::kBaseline, base);
  EXPECT_EQ(total_loss(v, base), 1.0);
}

TEST(Presets, UtZapposDefaults) {
  const RunConfig c = preset("ut-zappos");
  EXPECT_EQ(c.weights.lambda1, 0.9);
  EXPECT_EQ(c.weights.lambda2, 10.0);
  EXPECT_EQ(c.weights.lambda3, 10.0);
  EXPECT_EQ(c.weights.lambda4, 0.9);
  EXPECT_EQ(c.weights.lambda5, 0.1);
  EXPECT_EQ(c.train.epochs, 20);
  EXPECT_EQ(c.train.batch_size, 128);
}

TEST(Model, ScoreBundleShapesAndRanges) {
  const Dataset ds = tiny_dataset(1);
  RunConfig cfg = tiny_config();
  Model m(cfg.model, cfg.weights, 4, 4, 7);
  const auto cands = ds.test_space.test_closed();
  const ScoreBundle b = m.score(stack(ds.test), cands);
  const auto n = static_cast<Eigen::Index>(ds.test.size());
  const auto k = static_cast<Eigen::Index>(cands.size());
  EXPECT_EQ(b.attr.rows(), n);
  EXPECT_EQ(b.attr.cols(), 4);
  EXPECT_EQ(b.comp.cols(), k);
  EXPECT_EQ(b.pair.cols(), k);
  for (const Matrix* s : {&b.attr, &b.obj, &b.comp, &b.pair}) {
    EXPECT_LE(s->cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  }
  EXPECT_TRUE(b.combined.allFinite());
  EXPECT_EQ(b.combined, inference_score(b.cla, b.pair, 0.5));
  EXPECT_THROW(m.score(Matrix::Ones(2, 9), cands), DimensionError);
}

TEST(Model, PairPathOffMatchesBaselineBitwise) {
  const Dataset ds = tiny_dataset(2);
  RunConfig full = tiny_config();
  full.weights.lambda4 = full.weights.lambda5 = 0.0;
  full.weights.beta = 1.0;
  LossWeights base = full.weights;
  apply_ablation(Ablation::kBaseline, base);
  Model a(full.model, full.weights, 4, 4, 11);
  Model b(full.model, base, 4, 4, 11);
  const Matrix x = stack(ds.test);
  const auto cands = ds.test_space.test_closed();
  const ScoreBundle sa = a.score(x, cands), sb = b.score(x, cands);
  EXPECT_EQ(sa.pair.size(), 0);
  EXPECT_TRUE((sa.combined.array() == sb.combined.array()).all());
  EXPECT_EQ(predict(sa.combined), predict(sb.combined));
}

TEST(Train, BaselineAblationEqualsZeroedWeightsBitwise) {
  const Dataset ds = tiny_dataset(3);
  RunConfig ab = tiny_config(5);
  ab.ablation = Ablation::kBaseline;
  RunConfig manual = tiny_config(5);
  manual.weights.lambda2 = manual.weights.lambda3 = 0.0;
  manual.weights.lambda4 = manual.weights.lambda5 = 0.0;
  manual.weights.beta = 1.0;
  const TrainInputs in{&ds.train, &ds.train_space, &ds.val, &ds.val_space};
  TrainResult r1 = train(ab, in);
  TrainResult r2 = train(manual, in);
  EXPECT_TRUE(same_params(r1.last.params(), r2.last.params()));
  const auto cands = ds.test_space.test_closed();
  EXPECT_EQ(predict(r1.best.inference_scores(stack(ds.test), cands)),
            predict(r2.best.inference_scores(stack(ds.test), cands)));
  EXPECT_FALSE(r1.log.front().loss.dis.has_value());
  EXPECT_FALSE(r1.log.front().loss.cts.has_value());
}

TEST(Train, DeterministicGivenSeed) {
  const Dataset ds = tiny_dataset(4);
  const RunConfig cfg = tiny_config(9);
  const TrainInputs in{&ds.train, &ds.train_space, &ds.val, &ds.val_space};
  TrainResult a = train(cfg, in);
  TrainResult b = train(cfg, in);
  EXPECT_TRUE(same_params(a.last.params(), b.last.params()));
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  EXPECT_EQ(a.log.back().loss.total, b.log.back().loss.total);
  RunConfig other = cfg;
  other.train.seed = 10;
  EXPECT_FALSE(same_params(a.last.params(), train(other, in).last.params()));
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const Dataset ds = tiny_dataset(5);
  RunConfig cfg = tiny_config(3);
  cfg.train.lr = 0.0;
  const TrainInputs in{&ds.train, &ds.train_space, nullptr, nullptr};
  TrainResult r = train(cfg, in);
  const Model init(cfg.model, cfg.weights, 4, 4, cfg.train.seed);
  EXPECT_TRUE(same_params(init.params(), r.last.params()));
  ASSERT_EQ(r.log.size(), 3u);
  for (const auto& e : r.log) {
    // Batch-independent terms are constant; the Cartesian term depends on
    // how the shuffle groups samples.
    EXPECT_NEAR(e.loss.cla, r.log.front().loss.cla, 1e-12);
    EXPECT_NEAR(*e.loss.dis, *r.log.front().loss.dis, 1e-12);
    EXPECT_NEAR(*e.loss.rec, *r.log.front().loss.rec, 1e-12);
    EXPECT_NEAR(*e.loss.pair, *r.log.front().loss.pair, 1e-12);
  }
  EXPECT_EQ(r.best_epoch, 3);
}

TEST(Train, ClassificationLossDescends) {
  const Dataset ds = tiny_dataset(6);
  RunConfig cfg = tiny_config(1);
  ASSERT_EQ(ds.train.size() % 10, 0u);
  cfg.train.batch_size = static_cast<int>(ds.train.size() / 10);
  cfg.train.epochs = 20;
  const TrainInputs in{&ds.train, &ds.train_space, nullptr, nullptr};
  TrainResult r = train(cfg, in);
  ASSERT_EQ(r.log.front().steps * 20, 200);
  EXPECT_LT(r.log.back().loss.cla, r.log.front().loss.cla);
  EXPECT_LT(r.log.back().loss.total, r.log.front().loss.total);
}

TEST(Train, SmallStepDecreasesLoss) {
  const Dataset ds = tiny_dataset(7);
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RunConfig cfg = tiny_config(seed);
    Model m(cfg.model, cfg.weights, 4, 4, seed);
    const LossContext ctx = LossContext::make(ds.train_space, ds.train, cfg.train, cfg.weights);
    std::vector<Sample> batch(ds.train.begin(), ds.train.begin() + 16);
    std::vector<Pair> labels;
    for (const auto& s : batch) labels.push_back(s.pair());
    const Matrix x = stack(batch);
    Graph g;
    const LossVars v = build_loss(g, m, x, labels, ctx);
    m.params().zero_grads();
    g.backward(v.total);
    const double before = g.scalar(v.total);
    for (auto& e : m.params().entries()) {
      if (e.trainable) e.value -= 1e-6 * e.grad;
    }
    Graph g2;
    const double after = g2.scalar(build_loss(g2, m, x, labels, ctx).total);
    if (after < before) ++decreased;
  }
  EXPECT_EQ(decreased, 10);
}

TEST(Train, LossValuesMatchComponentWeights) {
  const Dataset ds = tiny_dataset(8);
  RunConfig cfg = tiny_config();
  Model m(cfg.model, cfg.weights, 4, 4, 2);
  const LossContext ctx = LossContext::make(ds.train_space, ds.train, cfg.train, cfg.weights);
  std::vector<Pair> labels;
  for (std::size_t i = 0; i < 12; ++i) labels.push_back(ds.train[i].pair());
  Graph g;
  const Matrix x = stack(std::vector<Sample>(ds.train.begin(), ds.train.begin() + 12));
  const LossValues v = loss_values(g, build_loss(g, m, x, labels, ctx));
  ASSERT_TRUE(v.dis && v.rec && v.pair && v.cts);
  EXPECT_NEAR(v.total, total_loss(v, cfg.weights), 1e-12);
  EXPECT_NEAR(v.cla, 0.9 * v.comp + 0.1 * (v.attr + v.obj), 1e-12);
  // L^c over the full grid, straight from the score bundle.
  std::vector<Pair> grid;
  for (int a = 0; a < 4; ++a)
    for (int o = 0; o < 4; ++o) grid.push_back({a, o});
  const ScoreBundle b = m.score(x, grid);
  std::vector<int> ta, to, tc;
  for (const Pair& p : labels) {
    ta.push_back(p.attr);
    to.push_back(p.obj);
    tc.push_back(p.attr * 4 + p.obj);
  }
  EXPECT_NEAR(v.cla, classification_loss(b.attr, b.obj, b.comp, ta, to, tc, 0.01, 0.9), 1e-10);
}

TEST(Train, GradCheckFullObjective) {
  const Dataset ds = tiny_dataset(9, 3, 3, 6, 4);
  RunConfig cfg = tiny_config();
  cfg.model.d = 4;
  cfg.model.d_backbone = 6;
  cfg.weights.tau = 0.5;
  Model m(cfg.model, cfg.weights, 3, 3, 4);
  const LossContext ctx = LossContext::make(ds.train_space, ds.train, cfg.train, cfg.weights);
  std::vector<Sample> batch(ds.train.begin(), ds.train.begin() + 5);
  std::vector<Pair> labels;
  for (const auto& s : batch) labels.push_back(s.pair());
  const Matrix x = stack(batch);
  LossFn f = [&](ParamStore&, bool with_grad) {
    Graph g;
    const LossVars v = build_loss(g, m, x, labels, ctx);
    if (with_grad) g.backward(v.total);
    return g.scalar(v.total);
  };
  GradCheckOptions opt;
  opt.coords_per_param = 6;
  const auto r = grad_check(f, m.params(), opt);
  EXPECT_TRUE(r.ok()) << r.failures.size() << " failures, max rel " << r.max_rel_error;
}

TEST(Train, Errors) {
  const Dataset ds = tiny_dataset(10);
  RunConfig cfg = tiny_config();
  const std::vector<Sample> empty;
  EXPECT_THROW(train(cfg, TrainInputs{&empty, &ds.train_space, nullptr, nullptr}), TrainingError);
  EXPECT_THROW(train(cfg, TrainInputs{}), ConfigError);
  std::vector<Sample> bad = ds.train;
  bad[0].feature = Vector::Zero(3);
  EXPECT_THROW(train(cfg, TrainInputs{&bad, &ds.train_space, nullptr, nullptr}), DimensionError);
}

TEST(Train, NonFiniteComponentIsNamed) {
  const Dataset ds = tiny_dataset(11);
  RunConfig cfg = tiny_config();
  cfg.train.lr = 1e300;
  cfg.train.epochs = 5;
  try {
    train(cfg, TrainInputs{&ds.train, &ds.train_space, nullptr, nullptr});
    FAIL() << "expected a non-finite loss";
  } catch (const TrainingError& e) {
    EXPECT_FALSE(e.component().empty());
  } catch (const DegenerateVectorError&) {
    // Exploded parameters can also collapse a feature to zero first.
  }
}

TEST(Train, EpochLogCsv) {
  EpochLog log;
  log.epoch = 2;
  log.steps = 5;
  log.loss.cla = 1.5;
  log.loss.rec = -0.25;
  const std::string header = epoch_log_header();
  const std::string r = epoch_log_row(log);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(r.begin(), r.end(), ','));
  EXPECT_EQ(r.rfind("2,5,", 0), 0u);
  EXPECT_NE(r.find(",,"), std::string::npos);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore s;
  s.add("x", row({1.0, -2.0}));
  s.add("frozen", row({3.0}), false);
  s.grad("x") = row({0.5, -4.0});
  s.grad("frozen") = row({1.0});
  Adam opt(0.1, 0.9, 0.999, 1e-8);
  opt.step(s);
  EXPECT_NEAR(s.value("x")(0, 0), 0.9, 1e-7);
  EXPECT_NEAR(s.value("x")(0, 1), -1.9, 1e-7);
  EXPECT_EQ(s.value("frozen")(0, 0), 3.0);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const Dataset ds = tiny_dataset(12);
  RunConfig cfg = tiny_config(4);
  cfg.train.epochs = 1;
  TrainResult r = train(cfg, TrainInputs{&ds.train, &ds.train_space, nullptr, nullptr});
  const std::string path = defa::testing::scratch_dir("ckpt") + "/model.defa";
  save_checkpoint(path, r.best, cfg);
  Checkpoint back = load_checkpoint(path);
  EXPECT_TRUE(same_params(r.best.params(), back.model.params()));
  EXPECT_EQ(back.config.to_map(), cfg.to_map());
  const auto cands = ds.test_space.test_closed();
  const Matrix x = stack(ds.test);
  const Matrix s1 = r.best.inference_scores(x, cands);
  const Matrix s2 = back.model.inference_scores(x, cands);
  EXPECT_TRUE((s1.array() == s2.array()).all());
  EXPECT_EQ(encode_checkpoint(back.model, back.config), encode_checkpoint(r.best, cfg));
}

TEST(Checkpoint, RejectsCorruption) {
  RunConfig cfg = tiny_config();
  Model m(cfg.model, cfg.weights, 4, 4, 1);
  const std::string bytes = encode_checkpoint(m, cfg);
  auto kind_of = [](const std::string& b) {
    try {
      decode_checkpoint(b);
    } catch (const FormatError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "accepted corrupt checkpoint";
    return FormatError::Kind::kIo;
  };
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(kind_of(bad), FormatError::Kind::kBadMagic);
  bad = bytes;
  bad[4] = 9;
  EXPECT_EQ(kind_of(bad), FormatError::Kind::kBadVersion);
  EXPECT_EQ(kind_of(bytes.substr(0, bytes.size() - 3)), FormatError::Kind::kTruncated);
  EXPECT_EQ(kind_of(bytes + "x"), FormatError::Kind::kTrailingBytes);
  bad = bytes;
  const double nan = std::nan("");
  std::memcpy(bad.data() + bad.size() - 8, &nan, 8);
  EXPECT_EQ(kind_of(bad), FormatError::Kind::kNonFinite);
  EXPECT_THROW(load_checkpoint(defa::testing::scratch_dir("ckpt") + "/missing.defa"),
               FormatError);
}
