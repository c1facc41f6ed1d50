// Copyright 2026 The styleflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gen.hpp"
#include "styleflow/synthetic.hpp"
#include "styleflow/training.hpp"

namespace styleflow {
namespace {

using testing::Gen;
using testing::random_model;
using MatD = Matrix<double>;

FlowModel<double> identity_model(Variant v = Variant::kDim3) {
  FlowConfig cfg;
  cfg.variant = v;
  auto m = build_model<double>(cfg);
  set_actnorm_identity(m);
  return m;
}

PairedFrames identity_pairs(int count, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PairedFrames d;
  for (int i = 0; i < count; ++i) {
    const auto img = procedural_frame(size, size, rng);
    d.frames.push_back({"id" + std::to_string(i), img, img});
    d.train.push_back(static_cast<std::size_t>(i));
  }
  return d;
}

// --- losses --------------------------------------------------------------------

TEST(Loss, NllOfIdentityModel) {
  auto m = identity_model();
  Gen g(1);
  const auto c = g.conditioning<double>(1, 4);
  EXPECT_NEAR(nll_loss_value(m, MatD(MatD::Zero(1, 3)), c), 0.0, 1e-15);
  EXPECT_NEAR(nll_loss_value(m, MatD(MatD::Ones(1, 3)), c), 1.5, 1e-12);
  // Mean over rows.
  MatD x(2, 3);
  x << 0, 0, 0, 1, 1, 1;
  EXPECT_NEAR(nll_loss_value(m, x, g.conditioning<double>(2, 4)), 0.75, 1e-12);
}

TEST(Loss, NllOfSplitVariantCountsTheSplitChannel) {
  auto m = identity_model(Variant::kDim2Split);
  Gen g(2);
  EXPECT_NEAR(nll_loss_value(m, MatD(MatD::Ones(1, 3)), g.conditioning<double>(1, 4)), 1.5, 1e-12);
}

TEST(Loss, SinglePixelReconstructionIsExact) {
  Gen g(3);
  for (auto v : {Variant::kDim3, Variant::kDim4Augmented}) {
    auto m = random_model<double>(v, 4, 12, 8, 5, 0.2);
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = g.pixels<double>(1), c = g.conditioning<double>(1, 4);
      EXPECT_LT(reconstruction_loss_value(m, x, c), 1e-4);
      EXPECT_GE(reconstruction_loss_value(m, x, c), std::sqrt(kNormEpsilon) - 1e-12);
    }
  }
}

TEST(Loss, TotalIsWeightedSum) {
  Gen g(4);
  for (int trial = 0; trial < 25; ++trial) {
    auto m = random_model<double>(Variant::kDim3, 2, 8, 2, trial, 0.3);
    const auto x = g.pixels<double>(32), c = g.conditioning<double>(32, 2);
    const double wn = g.uniform(0, 3), wr = g.uniform(0, 3);
    ad::Tape<double> tape;
    const auto t = frame_loss(tape, m, x, c, {wn, wr});
    EXPECT_NEAR(tape.scalar(t.total), wn * tape.scalar(t.nll) + wr * tape.scalar(t.rec), 1e-10);
    EXPECT_NEAR(tape.scalar(t.nll), nll_loss_value(m, x, c), 1e-12);
    EXPECT_NEAR(tape.scalar(t.rec), reconstruction_loss_value(m, x, c), 1e-12);
    EXPECT_GE(tape.scalar(t.rec), 0.0);
  }
  auto m = random_model<double>(Variant::kDim3, 2, 8, 2, 0);
  ad::Tape<double> tape;
  EXPECT_THROW(frame_loss(tape, m, MatD(0, 3), MatD(0, 10)), ArgumentError);
}

TEST(Loss, ReconstructionIsZeroForConstantStyleTargets) {
  // Targets generated from one latent reconstruct exactly from their centroid.
  Gen g(5);
  auto m = random_model<double>(Variant::kDim3, 4, 12, 8, 6, 0.2);
  const auto c = g.conditioning<double>(64, 4);
  const MatD z0 = g.matrix<double>(1, 3, -1, 1);
  const MatD x = flow_forward(m, z0, c);
  EXPECT_LT(reconstruction_loss_value(m, x, c), 1e-5);
}

// --- schedule, statistics, reports -----------------------------------------------------

TEST(Schedule, HalvesEveryStep) {
  LrSchedule s;
  EXPECT_DOUBLE_EQ(s.at(5e-4, 0), 5e-4);
  EXPECT_DOUBLE_EQ(s.at(5e-4, 19), 5e-4);
  EXPECT_DOUBLE_EQ(s.at(5e-4, 20), 2.5e-4);
  EXPECT_DOUBLE_EQ(s.at(5e-4, 40), 1.25e-4);
  EXPECT_DOUBLE_EQ((LrSchedule{0, 0.5}).at(1e-3, 100), 1e-3);
}

TEST(Stats, Percentile) {
  EXPECT_DOUBLE_EQ(percentile({5, 1, 4, 2, 3}, 0), 1.0);
  EXPECT_DOUBLE_EQ(percentile({5, 1, 4, 2, 3}, 100), 5.0);
  EXPECT_DOUBLE_EQ(percentile({5, 1, 4, 2, 3}, 50), 3.0);
  EXPECT_DOUBLE_EQ(percentile({5, 1, 4, 2, 3}, 5), 1.2);
  EXPECT_DOUBLE_EQ(percentile({7}, 5), 7.0);
  EXPECT_THROW(percentile({}, 5), ArgumentError);
}

TEST(Stats, FifthPercentileNeverExceedsMean) {
  Gen g(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(g.integer(1, 50)));
    for (auto& x : v) x = g.uniform(10, 60);
    const auto r = summarize(std::vector<std::string>(v.size()), v);
    EXPECT_LE(r.p5, r.mean + 1e-12);
    EXPECT_GE(r.p5, *std::min_element(v.begin(), v.end()) - 1e-12);
  }
}

TEST(Stats, SummaryCapsInfinitePsnr) {
  const auto r = summarize({"a", "b"}, {std::numeric_limits<double>::infinity(), 40.0});
  EXPECT_DOUBLE_EQ(r.mean, (kPsnrAggregateCap + 40.0) / 2);
  EXPECT_TRUE(std::isinf(r.psnr[0]));
}

TEST(Report, JsonLinesWithSummary) {
  TrainReport r;
  r.epochs.push_back({0, 5e-4, 1.0, 0.1, 20, 21, 0.5});
  r.epochs.push_back({1, 5e-4, 0.5, 0.05, 25, 26, 0.5});
  r.best_epoch = 1;
  r.best_heldout_psnr = 26;
  r.steps = 10;
  std::ostringstream os;
  write_report(os, r);
  std::istringstream is(os.str());
  std::string line;
  std::vector<nlohmann::json> lines;
  while (std::getline(is, line)) lines.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[1]["epoch"], 1);
  EXPECT_DOUBLE_EQ(lines[0]["heldout_psnr"].get<double>(), 21.0);
  EXPECT_TRUE(lines[2]["summary"].get<bool>());
  EXPECT_EQ(lines[2]["best_epoch"], 1);
}

TEST(Sampling, DistinctIndicesWithoutReplacement) {
  std::mt19937_64 rng(7);
  std::vector<std::size_t> scratch;
  for (std::size_t k : {1u, 10u, 999u, 1000u, 5000u}) {
    const auto idx = detail::sample_pixels(1000, k, rng, scratch);
    EXPECT_EQ(idx.size(), std::min<std::size_t>(k, 1000));
    const std::set<std::size_t> uniq(idx.begin(), idx.end());
    EXPECT_EQ(uniq.size(), idx.size());
    EXPECT_LT(*uniq.rbegin(), 1000u);
  }
  const auto s = detail::strided_pixels(100, 10);
  EXPECT_EQ(s.front(), 0u);
  EXPECT_EQ(s.back(), 90u);
}

// --- training -------------------------------------------------------------------------

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.pixels_per_step = 256;
  cfg.monitor_pixels = 256;
  cfg.seed = 11;
  return cfg;
}

FlowModel<float> small_model(Variant v = Variant::kDim3) {
  FlowConfig fc;
  fc.variant = v;
  fc.degree = 2;
  fc.hidden_width = 8;
  fc.blocks = 4;
  return build_model<float>(fc);
}

TEST(Train, DeterministicUnderSeed) {
  const auto data = identity_pairs(3, 24, 1);
  const auto a = train(small_model(Variant::kDim4Augmented), data, small_config());
  const auto b = train(small_model(Variant::kDim4Augmented), data, small_config());
  ASSERT_EQ(a.report.epochs.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_EQ(a.report.epochs[e].nll, b.report.epochs[e].nll);
    EXPECT_EQ(a.report.epochs[e].rec, b.report.epochs[e].rec);
    EXPECT_EQ(a.report.epochs[e].heldout_psnr, b.report.epochs[e].heldout_psnr);
  }
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
  EXPECT_EQ(a.report.steps, 6);
  EXPECT_TRUE(a.report.heldout_is_train);
}

TEST(Train, ZeroEpochsInitializesActNormOnly) {
  const auto data = identity_pairs(1, 16, 2);
  auto cfg = small_config();
  cfg.epochs = 0;
  const auto r = train(small_model(), data, cfg);
  EXPECT_TRUE(r.model.actnorm_ready());
  EXPECT_TRUE(r.report.epochs.empty());
  EXPECT_EQ(r.report.steps, 0);
  EXPECT_EQ(r.report.best_epoch, -1);
}

TEST(Train, InvalidInputs) {
  auto cfg = small_config();
  PairedFrames empty;
  EXPECT_THROW(train(small_model(), empty, cfg), ArgumentError);
  const auto data = identity_pairs(1, 16, 3);
  cfg.epochs = -1;
  EXPECT_THROW(train(small_model(), data, cfg), ArgumentError);
  cfg = small_config();
  cfg.initial_lr = 0;
  EXPECT_THROW(train(small_model(), data, cfg), ArgumentError);
  auto bad = data;
  bad.frames[0].target = ImageBuffer(8, 8);
  EXPECT_THROW(train(small_model(), bad, small_config()), ShapeError);
}

TEST(Train, ExplodingLearningRateReportsDivergence) {
  const auto data = identity_pairs(2, 16, 4);
  auto cfg = small_config();
  cfg.initial_lr = 1e6;
  cfg.epochs = 5;
  try {
    train(small_model(), data, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Train, LossDecreasesAndBestEpochIsKept) {
  const auto data = identity_pairs(2, 32, 5);
  auto cfg = small_config();
  cfg.epochs = 6;
  cfg.passes_per_epoch = 5;
  cfg.initial_lr = 2e-3;
  int calls = 0;
  cfg.on_epoch = [&](const EpochStats&) { ++calls; };
  const auto r = train(small_model(), data, cfg);
  EXPECT_EQ(calls, 6);
  EXPECT_EQ(r.report.steps, 60);
  EXPECT_LT(r.report.epochs.back().nll, r.report.epochs.front().nll);
  const auto best = std::max_element(r.report.epochs.begin(), r.report.epochs.end(),
                                     [](const auto& a, const auto& b) { return a.heldout_psnr < b.heldout_psnr; });
  EXPECT_EQ(r.report.best_epoch, best->epoch);
  EXPECT_NEAR(detail::mean_subset_psnr(r.model, data, data.train, cfg.monitor_pixels), best->heldout_psnr, 1e-9);
}

TEST(Train, IdentityTaskLearnedWithinFiveEpochs) {
  const auto data = identity_pairs(1, 64, 6);
  FlowModel<float> model = build_model<float>(FlowConfig{});
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.passes_per_epoch = 150;
  cfg.pixels_per_step = 1024;
  cfg.initial_lr = 1e-3;
  cfg.seed = 3;
  const auto r = train(std::move(model), data, cfg);
  EXPECT_GT(r.report.best_heldout_psnr, 45.0);
  const auto eval = evaluate(r.model, data, data.train);
  EXPECT_GT(eval.mean, 45.0);
  EXPECT_LE(eval.p5, eval.mean);
}

}  // namespace
}  // namespace styleflow
