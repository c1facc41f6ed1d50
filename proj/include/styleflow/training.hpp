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

#pragma once

// Bi-directional training: the NLL of per-pixel latents under N(0, I) plus a
// reconstruction loss that regenerates every sampled pixel of a frame from
// the frame's centroid latent.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "styleflow/adam.hpp"
#include "styleflow/autodiff.hpp"
#include "styleflow/dataset.hpp"
#include "styleflow/error.hpp"
#include "styleflow/flow.hpp"
#include "styleflow/flow_tape.hpp"
#include "styleflow/image.hpp"
#include "styleflow/pcc.hpp"
#include "styleflow/style.hpp"

namespace styleflow {

// --- losses -----------------------------------------------------------------

// Pixels in `x` carry the augmentation channel for the dim4 variant.
// mean_p(0.5 |z_p|^2 - log_det_p); the 0.5 d log(2 pi) term is dropped.
template <typename T>
Var<T> nll_loss(ad::Tape<T>& tape, const TapedLatents<T>& lat) {
  Var<T> sq = tape.row_sum(tape.square(lat.z));
  if (lat.split) sq = tape.add(sq, tape.square(*lat.split));
  return tape.sub(tape.scale(tape.mean(sq), T(0.5)), tape.mean(lat.log_det));
}

inline constexpr double kNormEpsilon = 1e-12;

// mean_p |g(z_bar; c_p) - x_p|_2 with z_bar the centroid of the latents.
// Gradients reach the inverse pass through z_bar.
template <typename T>
Var<T> reconstruction_loss(ad::Tape<T>& tape, FlowModel<T>& model, const TapedLatents<T>& lat,
                           Var<T> x, Var<T> c) {
  const auto rows = tape.value(x).rows();
  Var<T> centroid = tape.broadcast_rows(tape.col_mean(lat.z), rows);
  Var<T> generated = tape.slice_cols(taped_flow_forward(tape, model, centroid, c), 0, 3);
  Var<T> diff = tape.sub(generated, tape.slice_cols(x, 0, 3));
  Var<T> sq = tape.add(tape.row_sum(tape.square(diff)),
                       tape.constant(Matrix<T>::Constant(1, 1, static_cast<T>(kNormEpsilon))));
  return tape.mean(tape.sqrt(sq));
}

template <typename T>
struct LossTerms {
  Var<T> nll;
  Var<T> rec;
  Var<T> total;
};

struct LossWeights {
  double nll = 1.0;
  double rec = 1.0;
};

// total = w_nll * NLL + w_rec * rec for one frame's batch of pixels.
template <typename T>
LossTerms<T> frame_loss(ad::Tape<T>& tape, FlowModel<T>& model, const Matrix<T>& x_in,
                        const Matrix<T>& c_in, const LossWeights& w = {}) {
  if (x_in.rows() == 0) throw ArgumentError("loss: empty batch");
  Var<T> x = tape.constant(x_in);
  Var<T> c = tape.constant(c_in);
  auto lat = taped_flow_inverse(tape, model, x, c);
  Var<T> nll = nll_loss(tape, lat);
  Var<T> rec = reconstruction_loss(tape, model, lat, x, c);
  Var<T> total = tape.add(tape.scale(nll, static_cast<T>(w.nll)), tape.scale(rec, static_cast<T>(w.rec)));
  return {nll, rec, total};
}

// Appends the augmentation column for dim4 models.
template <typename T>
Matrix<T> model_input(const FlowModel<T>& model, const Matrix<T>& x, const Matrix<T>* aug) {
  return detail::augment(model, x, aug);
}

template <typename T>
double nll_loss_value(FlowModel<T>& model, const Matrix<T>& x, const Matrix<T>& c,
                      const Matrix<T>* aug = nullptr) {
  ad::Tape<T> tape;
  auto lat = taped_flow_inverse(tape, model, tape.constant(model_input(model, x, aug)), tape.constant(c));
  return static_cast<double>(tape.scalar(nll_loss(tape, lat)));
}

template <typename T>
double reconstruction_loss_value(FlowModel<T>& model, const Matrix<T>& x, const Matrix<T>& c,
                                 const Matrix<T>* aug = nullptr) {
  ad::Tape<T> tape;
  Var<T> xv = tape.constant(model_input(model, x, aug));
  Var<T> cv = tape.constant(c);
  auto lat = taped_flow_inverse(tape, model, xv, cv);
  return static_cast<double>(tape.scalar(reconstruction_loss(tape, model, lat, xv, cv)));
}

// --- configuration and reports ----------------------------------------------

// lr(epoch) = initial_lr * factor^floor(epoch / step_epochs).
struct LrSchedule {
  int step_epochs = 20;
  double factor = 0.5;

  double at(double initial, int epoch) const {
    if (step_epochs <= 0) return initial;
    return initial * std::pow(factor, epoch / step_epochs);
  }
};

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  double nll = 0;
  double rec = 0;
  double train_psnr = 0;
  double heldout_psnr = 0;
  double seconds = 0;
};

struct TrainConfig {
  int epochs = 80;
  double initial_lr = 5e-4;
  LrSchedule schedule;
  int pixels_per_step = 4096;
  int frames_per_batch = 1;
  int passes_per_epoch = 1;  // sweeps over the training frames per epoch
  LossWeights weights;
  std::uint64_t seed = 0;
  // Per-epoch PSNR monitoring runs on a fixed subset of pixels per frame.
  int monitor_pixels = 4096;
  int monitor_train_frames = 16;
  bool keep_best = true;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_heldout_psnr = -std::numeric_limits<double>::infinity();
  std::int64_t steps = 0;
  bool heldout_is_train = false;  // no test split: monitoring used train frames
};

inline nlohmann::json epoch_json(const EpochStats& e) {
  return {{"epoch", e.epoch}, {"lr", e.lr}, {"nll", e.nll}, {"rec", e.rec},
          {"train_psnr", e.train_psnr}, {"heldout_psnr", e.heldout_psnr}, {"seconds", e.seconds}};
}

// One JSON object per line, one line per epoch, then a summary line.
inline void write_report(std::ostream& os, const TrainReport& r) {
  for (const auto& e : r.epochs) os << epoch_json(e).dump() << '\n';
  nlohmann::json summary = {{"summary", true}, {"best_epoch", r.best_epoch}, {"steps", r.steps},
                            {"heldout_is_train", r.heldout_is_train}};
  if (std::isfinite(r.best_heldout_psnr)) summary["best_heldout_psnr"] = r.best_heldout_psnr;
  os << summary.dump() << '\n';
}

class TrainingDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

// --- evaluation -------------------------------------------------------------

// Per-image PSNR values above this are treated as equal when aggregating,
// so a pixel-exact reconstruction does not turn the mean into +inf.
inline constexpr double kPsnrAggregateCap = 100.0;

struct EvalResult {
  std::vector<std::string> ids;
  std::vector<double> psnr;
  double mean = 0;
  double p5 = 0;  // 5th percentile, linear interpolation
};

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw ArgumentError("percentile: empty input");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline EvalResult summarize(std::vector<std::string> ids, std::vector<double> psnr) {
  if (psnr.empty()) throw ArgumentError("evaluate: empty split");
  EvalResult r{std::move(ids), std::move(psnr), 0, 0};
  std::vector<double> capped(r.psnr.size());
  for (std::size_t i = 0; i < capped.size(); ++i) capped[i] = std::min(r.psnr[i], kPsnrAggregateCap);
  r.mean = std::accumulate(capped.begin(), capped.end(), 0.0) / static_cast<double>(capped.size());
  r.p5 = percentile(capped, 5.0);
  return r;
}

// For every pair: style from the target (all pixels), regenerate the frame
// from (source, style), PSNR against the target.
template <typename T>
EvalResult evaluate(const FlowModel<T>& model, const PairedFrames& frames,
                    const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ArgumentError("evaluate: empty split");
  std::vector<std::string> ids;
  std::vector<double> values;
  for (auto i : indices) {
    const auto& f = frames.frames.at(i);
    const auto cond = make_conditioning<T>(f.source, model.config.degree);
    const auto style = extract_style(model, cond, f.target, f.id);
    values.push_back(psnr(apply_style(model, cond, style), f.target));
    ids.push_back(f.id);
  }
  return summarize(std::move(ids), std::move(values));
}

// --- training -----------------------------------------------------------------

namespace detail {

struct PixelBatch {
  Matrix<float> x;  // K x 3 targets
  Matrix<float> c;  // K x basis_len
};

inline PixelBatch gather_pixels(const FramePair& f, const std::vector<std::size_t>& idx, int degree) {
  PixelBatch b{Matrix<float>(static_cast<Eigen::Index>(idx.size()), 3),
               Matrix<float>(static_cast<Eigen::Index>(idx.size()), pcc_basis_length(degree))};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Rgb t = f.target.pixel(idx[k]);
    b.x(static_cast<Eigen::Index>(k), 0) = t.r;
    b.x(static_cast<Eigen::Index>(k), 1) = t.g;
    b.x(static_cast<Eigen::Index>(k), 2) = t.b;
    const Rgb s = f.source.pixel(idx[k]);
    pcc_basis_row(s.r, s.g, s.b, degree, b.c, static_cast<Eigen::Index>(k));
  }
  return b;
}

// K distinct pixel indices (all pixels when K >= count).
inline std::vector<std::size_t> sample_pixels(std::size_t count, std::size_t k, std::mt19937_64& rng,
                                              std::vector<std::size_t>& scratch) {
  scratch.resize(count);
  std::iota(scratch.begin(), scratch.end(), std::size_t{0});
  if (k >= count) return scratch;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, count - 1);
    std::swap(scratch[i], scratch[pick(rng)]);
  }
  return {scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k)};
}

// Fixed evenly strided subset used for monitoring.
inline std::vector<std::size_t> strided_pixels(std::size_t count, std::size_t k) {
  if (k == 0 || k >= count) {
    std::vector<std::size_t> all(count);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = i * count / k;
  return out;
}

// PSNR of centroid reconstruction on a pixel subset (no clamping of the
// subset logic beyond what apply does: outputs are clamped to [0, 1]).
inline double subset_psnr(const FlowModel<float>& model, const FramePair& f, std::size_t k) {
  const auto idx = strided_pixels(f.target.pixel_count(), k);
  const auto b = gather_pixels(f, idx, model.config.degree);
  const auto lat = flow_inverse(model, b.x, b.c);
  const Matrix<float> centroid = lat.z.colwise().mean();
  Matrix<float> out = flow_forward(model, centroid, b.c);
  out = out.cwiseMax(0.0f).cwiseMin(1.0f);
  const double mse = (out.cast<double>() - b.x.cast<double>()).array().square().mean();
  return psnr_from_mse(mse);
}

inline double mean_subset_psnr(const FlowModel<float>& model, const PairedFrames& data,
                               const std::vector<std::size_t>& indices, std::size_t k) {
  double acc = 0;
  for (auto i : indices) acc += std::min(subset_psnr(model, data.frames[i], k), kPsnrAggregateCap);
  return acc / static_cast<double>(indices.size());
}

}  // namespace detail

struct TrainResult {
  FlowModel<float> model;
  TrainReport report;
};

// Per step: pick frames, sample K pixels each, loss = NLL + rec averaged over
// the frames, one Adam step. Per epoch (passes_per_epoch sweeps over the training frames, in a
// seeded shuffled order): held-out PSNR; the best epoch's weights are kept.
namespace detail {

// Every step allocates and frees the same few hundred large tape buffers.
// glibc would serve each from a fresh mmap and hand it back afterwards.
inline void keep_tape_buffers_mapped() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace detail

inline TrainResult train(FlowModel<float> model, const PairedFrames& data, const TrainConfig& cfg) {
  detail::keep_tape_buffers_mapped();
  if (data.train.empty()) throw ArgumentError("train: no training pairs");
  if (cfg.epochs < 0 || cfg.pixels_per_step < 2 || cfg.frames_per_batch < 1 ||
      cfg.passes_per_epoch < 1 || !(cfg.initial_lr > 0))
    throw ArgumentError("train: invalid configuration");
  if (cfg.weights.nll < 0 || cfg.weights.rec < 0) throw ArgumentError("train: negative loss weight");
  for (auto i : data.train)
    if (!data.frames.at(i).source.same_size(data.frames[i].target))
      throw ShapeError("train: pair " + data.frames[i].id + " has mismatched sizes");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<std::size_t> scratch;
  const int degree = model.config.degree;
  const bool augmented = model.variant() == Variant::kDim4Augmented;
  auto draw_aug = [&](Eigen::Index rows) {
    Matrix<float> a(rows, 1);
    for (Eigen::Index i = 0; i < rows; ++i) a(i, 0) = normal(rng);
    return a;
  };

  TrainReport report;
  const std::vector<std::size_t>& heldout = data.test.empty() ? data.train : data.test;
  report.heldout_is_train = data.test.empty();
  std::vector<std::size_t> train_monitor(
      data.train.begin(),
      data.train.begin() + std::min<std::ptrdiff_t>(cfg.monitor_train_frames,
                                                    static_cast<std::ptrdiff_t>(data.train.size())));

  if (!model.actnorm_ready()) {
    const auto& f = data.frames[data.train.front()];
    const auto idx = detail::sample_pixels(f.target.pixel_count(), cfg.pixels_per_step, rng, scratch);
    const auto b = detail::gather_pixels(f, idx, degree);
    const Matrix<float> aug = augmented ? draw_aug(b.x.rows()) : Matrix<float>();
    initialize_actnorm(model, b.x, b.c, augmented ? &aug : nullptr);
  }

  auto params = model.parameters();
  ad::Adam<float> adam;
  std::vector<Matrix<float>> best;
  std::vector<std::size_t> order;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = cfg.schedule.at(cfg.initial_lr, epoch);
    order.clear();
    for (int pass = 0; pass < cfg.passes_per_epoch; ++pass) {
      const auto before = order.size();
      order.insert(order.end(), data.train.begin(), data.train.end());
      std::shuffle(order.begin() + static_cast<std::ptrdiff_t>(before), order.end(), rng);
    }
    double nll_sum = 0, rec_sum = 0;
    int step_count = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.frames_per_batch) {
      const std::size_t end = std::min(order.size(), pos + cfg.frames_per_batch);
      ad::Tape<float> tape;
      std::optional<Var<float>> total, nll, rec;
      try {
        for (std::size_t k = pos; k < end; ++k) {
          const auto& f = data.frames[order[k]];
          const auto idx = detail::sample_pixels(f.target.pixel_count(), cfg.pixels_per_step, rng, scratch);
          const auto b = detail::gather_pixels(f, idx, degree);
          const Matrix<float> aug = augmented ? draw_aug(b.x.rows()) : Matrix<float>();
          auto terms = frame_loss(tape, model, model_input(model, b.x, augmented ? &aug : nullptr), b.c,
                                  cfg.weights);
          total = total ? tape.add(*total, terms.total) : terms.total;
          nll = nll ? tape.add(*nll, terms.nll) : terms.nll;
          rec = rec ? tape.add(*rec, terms.rec) : terms.rec;
        }
        const float inv = 1.0f / static_cast<float>(end - pos);
        Var<float> loss = tape.scale(*total, inv);
        if (!std::isfinite(tape.scalar(loss))) throw NumericError("non-finite loss");
        nll_sum += tape.scalar(*nll) * inv;
        rec_sum += tape.scalar(*rec) * inv;
        tape.backward(loss);
        adam.step(params, lr);
      } catch (const NumericError& e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(report.steps) + ": " + e.what());
      }
      ++step_count;
      ++report.steps;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.nll = nll_sum / step_count;
    stats.rec = rec_sum / step_count;
    try {
      stats.train_psnr = detail::mean_subset_psnr(model, data, train_monitor, cfg.monitor_pixels);
      stats.heldout_psnr = detail::mean_subset_psnr(model, data, heldout, cfg.monitor_pixels);
    } catch (const NumericError& e) {
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(stats.nll) || std::isnan(stats.heldout_psnr))
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch));
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.epochs.push_back(stats);
    if (stats.heldout_psnr > report.best_heldout_psnr) {
      report.best_heldout_psnr = stats.heldout_psnr;
      report.best_epoch = epoch;
      if (cfg.keep_best) {
        best.clear();
        for (auto* p : params) best.push_back(p->value);
      }
    }
    if (cfg.on_epoch) cfg.on_epoch(stats);
  }
  if (cfg.keep_best && !best.empty())
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return {std::move(model), std::move(report)};
}

}  // namespace styleflow
