#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "cgmlp/training.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cgmlp;
using namespace cgmlp::train;

namespace {

ModelConfig tiny(const std::string& name) {
  auto cfg = ModelConfig::preset(name, DatasetKind::kCifar10);
  cfg.set_width(16);
  cfg.num_blocks = 2;
  cfg.gating.resize(2);
  for (int& c : cfg.stem_channels) c /= 8;
  return cfg;
}

struct Splits {
  data::Dataset train, val;
};

Splits synthetic_splits(std::size_t n, std::uint64_t seed) {
  auto [tr, va] = data::split_train_val(fixtures::synthetic_dataset(DatasetKind::kCifar10, n, seed),
                                        0.25, seed);
  return {std::move(tr), std::move(va)};
}

}  // namespace

TEST(Accuracy, ArgmaxWithLowestIndexTieBreak) {
  Tensor<float> logits({3, 3}, {0, 2, 1, 5, 5, 0, -1, -2, -3});
  std::vector<int> labels{1, 0, 2};
  EXPECT_DOUBLE_EQ(accuracy(logits, labels), 2.0 / 3.0);
  std::vector<int> wrong{0, 1};
  EXPECT_THROW(accuracy(logits, wrong), ShapeError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto p = Tensor<float>({3}, {1, 2, 3});
  Tape<float> tape;
  auto w = tape.watch(p);
  auto g = tape.backward(ops::sum(ops::mul(w, Tensor<float>::zeros({3}))));
  Adam<float> adam;
  adam.step({{"p", p}}, g);
  EXPECT_EQ(oracle::values(p), (oracle::Vec{1, 2, 3}));
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstTheGradientSign) {
  auto p = Tensor<double>({3}, {1.0, -2.0, 0.5});
  Tape<double> tape;
  auto w = tape.watch(p);
  auto g = tape.backward(ops::sum(ops::mul(w, Tensor<double>({3}, {3.0, -0.25, 1e-2}))));
  Adam<double> adam(AdamConfig{0.01, 0.9, 0.999, 1e-8});
  adam.step({{"p", p}}, g);
  EXPECT_NEAR(p.data()[0], 1.0 - 0.01, 1e-8);
  EXPECT_NEAR(p.data()[1], -2.0 + 0.01, 1e-8);
  EXPECT_NEAR(p.data()[2], 0.5 - 0.01, 1e-7);
  EXPECT_NEAR(adam.first_moment("p").data()[0], 0.3, 1e-12);
  EXPECT_NEAR(adam.second_moment("p").data()[0], 0.009, 1e-12);
}

TEST(Adam, ConvergesOnABowl) {
  auto p = Tensor<double>({4}, {3, -1, 2, -4});
  auto target = Tensor<double>({4}, {0.5, 0.5, -0.5, 1.0});
  Adam<double> adam(AdamConfig{0.05});
  for (int i = 0; i < 2000; ++i) {
    Tape<double> tape;
    auto w = tape.watch(p);
    auto diff = ops::add(w, ops::mul(target, Tensor<double>::full({4}, -1.0)));
    adam.step({{"p", p}}, tape.backward(ops::sum(ops::mul(diff, diff))));
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.data()[i], target.data()[i], 1e-3);
}

TEST(EarlyStop, HandTraces) {
  const EarlyStopPolicy p5{5, 0.001};
  std::vector<double> plateau{.3, .4, .4, .4, .4, .4, .4};
  EXPECT_FALSE(should_stop(std::span(plateau).first(6), p5));
  EXPECT_TRUE(should_stop(plateau, p5));

  // Slow creep below min_delta never counts as improvement.
  std::vector<double> creep{.5, .5005, .501, .5015, .502, .5025};
  EXPECT_TRUE(should_stop(creep, p5));

  // A dip followed by recovery to the old best is not an improvement.
  std::vector<double> dip{.5, .4, .5, .5};
  EXPECT_TRUE(should_stop(dip, EarlyStopPolicy{3, 0.001}));
  std::vector<double> rise{.5, .4, .45, .52};
  EXPECT_FALSE(should_stop(rise, EarlyStopPolicy{3, 0.001}));

  std::vector<double> one{.9};
  EXPECT_FALSE(should_stop(one, EarlyStopPolicy{1, 0.001}));
  std::vector<double> two{.9, .9};
  EXPECT_TRUE(should_stop(two, EarlyStopPolicy{1, 0.001}));
}

TEST(EarlyStop, StreamingMatchesOracleOnSampledTraces) {
  const auto traces = oracle::step_traces(7, 0.3, {-0.01, 0.0, 0.0005, 0.002});
  for (int patience : {1, 2, 3, 5}) {
    for (const auto& t : traces) {
      EarlyStopper s(EarlyStopPolicy{patience, 0.001});
      int first = 0;
      for (std::size_t i = 0; i < t.size() && !first; ++i) {
        if (s.update(t[i])) first = static_cast<int>(i) + 1;
      }
      ASSERT_EQ(first, oracle::early_stop_epoch(t, patience, 0.001));
    }
  }
}

TEST(HistoryCsv, WriteThenReadBack) {
  TrainReport a;
  a.model = "gmlp4";
  a.epochs = {{1, 2.3, 0.1, 2.2, 0.15, 0}, {2, 1.9, 0.3, 2.0, 0.25, 0}};
  TrainReport b;
  b.model = "cgmlp1";
  b.epochs = {{1, 2.1234567, 0.2, 2.0, 0.2, 0}};
  std::stringstream ss;
  write_history_csv(ss, {a, b});
  const std::string text = ss.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), kHistoryHeader);
  auto rows = read_history_csv(ss);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].model, "gmlp4");
  EXPECT_EQ(rows[1].epoch, 2);
  EXPECT_EQ(rows[2].model, "cgmlp1");
  EXPECT_DOUBLE_EQ(rows[2].train_loss, 2.123457);
  EXPECT_DOUBLE_EQ(rows[1].val_acc, 0.25);
  std::stringstream bad("model,epoch\nx,1\n");
  EXPECT_THROW(read_history_csv(bad), Error);
}

TEST(Fit, SingleEpochAndLossDecreases) {
  auto s = synthetic_splits(160, 1);
  auto model = Model<float>::build(tiny("gmlp4"));
  FitOptions opt;
  opt.epochs_max = 1;
  opt.batch_size = 16;
  auto r1 = fit(model, s.train, s.val, nullptr, opt);
  EXPECT_EQ(r1.epochs.size(), 1u);
  EXPECT_EQ(r1.stop_epoch, 1);
  EXPECT_FALSE(r1.stopped_early);

  auto fresh = Model<float>::build(tiny("gmlp4"));
  const double before = evaluate(fresh, s.train).loss;
  opt.epochs_max = 8;
  opt.early_stop.reset();
  auto r = fit(fresh, s.train, s.val, &s.val, opt);
  EXPECT_EQ(r.epochs.size(), 8u);
  EXPECT_LT(r.epochs.back().train_loss, before);
  EXPECT_GT(r.best_val_acc, 0.3);  // chance is 0.1
  ASSERT_TRUE(r.test_acc.has_value());
  // Best-validation weights are restored before the test evaluation.
  EXPECT_DOUBLE_EQ(*r.test_acc, r.best_val_acc);
  EXPECT_THROW(
      {
        opt.epochs_max = 0;
        fit(fresh, s.train, s.val, nullptr, opt);
      },
      Error);
}

TEST(Fit, DeterministicUnderFixedSeed) {
  auto s = synthetic_splits(64, 2);
  FitOptions opt;
  opt.epochs_max = 2;
  opt.batch_size = 16;
  auto m1 = Model<float>::build(tiny("cgmlp2"));
  auto m2 = Model<float>::build(tiny("cgmlp2"));
  auto r1 = fit(m1, s.train, s.val, nullptr, opt);
  auto r2 = fit(m2, s.train, s.val, nullptr, opt);
  for (std::size_t i = 0; i < r1.epochs.size(); ++i) {
    EXPECT_EQ(r1.epochs[i].train_loss, r2.epochs[i].train_loss);
    EXPECT_EQ(r1.epochs[i].val_acc, r2.epochs[i].val_acc);
  }
}

TEST(Fit, EarlyStopAndTrainAccuracyTarget) {
  auto s = synthetic_splits(64, 3);
  FitOptions opt;
  opt.epochs_max = 40;
  opt.batch_size = 16;
  opt.adam.lr = 0.0;  // nothing changes, so validation accuracy is flat
  opt.early_stop = EarlyStopPolicy{2, 0.001};
  auto m = Model<float>::build(tiny("gmlp4"));
  auto r = fit(m, s.train, s.val, nullptr, opt);
  EXPECT_EQ(r.stop_epoch, 3);
  EXPECT_TRUE(r.stopped_early);

  opt.adam.lr = 1e-3;
  opt.early_stop.reset();
  opt.stop_at_train_acc = 0.0;
  auto m2 = Model<float>::build(tiny("gmlp4"));
  EXPECT_EQ(fit(m2, s.train, s.val, nullptr, opt).epochs.size(), 1u);
}

TEST(Fit, NonFiniteInputReportsEpochAndBatch) {
  auto s = synthetic_splits(32, 4);
  s.train.images.mutable_data()[5] = std::nanf("");
  FitOptions opt;
  opt.epochs_max = 1;
  opt.batch_size = 24;
  opt.early_stop.reset();
  auto m = Model<float>::build(tiny("gmlp4"));
  try {
    fit(m, s.train, s.val, nullptr, opt);
    FAIL();
  } catch (const TrainingDivergedError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

TEST(Compare, IndependentModelsSameDataAndCsvRows) {
  auto s = synthetic_splits(48, 5);
  FitOptions opt;
  opt.epochs_max = 2;
  opt.batch_size = 12;
  opt.early_stop.reset();
  auto entries = compare({tiny("gmlp4"), tiny("cgmlp1"), tiny("cgmlp2")}, s.train, s.val, nullptr, opt);
  ASSERT_EQ(entries.size(), 3u);
  std::set<TensorId> ids;
  std::size_t total = 0;
  std::vector<TrainReport> reports;
  for (auto& e : entries) {
    for (auto& [n, t] : e.model.parameters()) {
      ids.insert(t.id());
      ++total;
    }
    reports.push_back(e.report);
  }
  EXPECT_EQ(ids.size(), total);
  std::stringstream ss;
  write_history_csv(ss, reports);
  EXPECT_EQ(read_history_csv(ss).size(), 6u);

  auto other = tiny("gmlp4");
  other.dataset = DatasetKind::kCifar100;
  other.num_classes = 100;
  EXPECT_THROW(compare({tiny("gmlp4"), other}, s.train, s.val, nullptr, opt), ConfigError);
}
