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

// styleflow command-line tool.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "styleflow/baseline.hpp"
#include "styleflow/container.hpp"
#include "styleflow/dataset.hpp"
#include "styleflow/image_io.hpp"
#include "styleflow/parallel.hpp"
#include "styleflow/service.hpp"
#include "styleflow/style.hpp"
#include "styleflow/synthetic.hpp"
#include "styleflow/training.hpp"

namespace fs = std::filesystem;
using namespace styleflow;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitInput = 2;
constexpr int kExitDiverged = 3;

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path.string() + ": cannot open");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError(path.string() + ": cannot write");
  os << text;
}

StyleVector read_style(const fs::path& path) { return style_from_json(read_json(path)); }

PairedFrames open_frames(const fs::path& dir, std::uint64_t seed, bool swap) {
  return load_frames(open_dataset(dir, seed, swap));
}

const std::vector<std::size_t>& split_indices(const PairedFrames& f, const std::string& split,
                                               std::vector<std::size_t>& all) {
  if (split == "train") return f.train;
  if (split == "test") return f.test;
  all = f.all();
  return all;
}

void print_eval(const EvalResult& r, bool per_pair) {
  if (per_pair)
    for (std::size_t i = 0; i < r.ids.size(); ++i) std::printf("%-24s %8.3f\n", r.ids[i].c_str(), r.psnr[i]);
  std::printf("pairs %zu  mean PSNR %.3f dB  5th percentile %.3f dB\n", r.psnr.size(), r.mean, r.p5);
}

// --- train --------------------------------------------------------------------

struct TrainArgs {
  std::string pairs, out, report, variant = "3";
  int degree = 4, epochs = 80, pixels = 4096, hidden = 28, blocks = 8, lr_step = 20, frames_per_batch = 1,
      passes = 1;
  double lr = 5e-4, lr_factor = 0.5;
  std::uint64_t seed = 0;
  bool nll_only = false, swap = false, quiet = false;
};

int run_train(const TrainArgs& a) {
  const auto data = open_frames(a.pairs, a.seed, a.swap);
  FlowConfig fc;
  fc.variant = parse_variant(a.variant);
  fc.degree = a.degree;
  fc.hidden_width = a.hidden;
  fc.blocks = a.blocks;
  fc.seed = a.seed;
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.initial_lr = a.lr;
  tc.schedule = {a.lr_step, a.lr_factor};
  tc.pixels_per_step = a.pixels;
  tc.frames_per_batch = a.frames_per_batch;
  tc.passes_per_epoch = a.passes;
  tc.seed = a.seed;
  if (a.nll_only) tc.weights.rec = 0;
  if (!a.quiet)
    tc.on_epoch = [](const EpochStats& e) {
      std::fprintf(stderr, "epoch %3d  lr %.2e  nll %8.4f  rec %.5f  train %.2f dB  held-out %.2f dB  %.1fs\n",
                   e.epoch, e.lr, e.nll, e.rec, e.train_psnr, e.heldout_psnr, e.seconds);
    };
  auto result = train(build_model<float>(fc), data, tc);

  nlohmann::json meta = {{"epochs", a.epochs}, {"lr", a.lr}, {"pixels_per_step", a.pixels},
                         {"best_epoch", result.report.best_epoch}, {"steps", result.report.steps},
                         {"pairs", fs::absolute(a.pairs).string()}, {"direction", direction_name(data.direction)},
                         {"nll_only", a.nll_only}};
  const std::string id = save_model(result.model, a.out, meta);
  std::ostringstream report;
  write_report(report, result.report);
  write_text(a.report.empty() ? a.out + ".report.jsonl" : a.report, report.str());

  const bool heldout = !data.test.empty();
  const auto eval = evaluate(result.model, data, heldout ? data.test : data.train);
  std::printf("model %s  parameters %zu\n", id.c_str(), result.model.parameter_count());
  std::printf("final mean %s PSNR %.3f dB (5th percentile %.3f dB)\n", heldout ? "test" : "train", eval.mean,
              eval.p5);
  return 0;
}

// --- extract ------------------------------------------------------------------

int run_extract(const std::string& model_path, const std::string& source, const std::string& target,
                const std::string& pairs, const std::string& out) {
  const auto mf = load_model(model_path);
  if (!pairs.empty()) {
    const auto data = open_frames(pairs, 0, false);
    std::ostringstream os;
    for (const auto& f : data.frames)
      os << style_to_json(extract_style(mf.model, f.source, f.target, f.id), mf.model_id).dump() << '\n';
    write_text(out, os.str());
    std::printf("%zu style records\n", data.frames.size());
    return 0;
  }
  if (source.empty() || target.empty()) throw ArgumentError("extract: need --source and --target, or --pairs");
  const auto src = load_image(source).image;
  const auto tgt = load_image(target).image;
  const auto style = extract_style(mf.model, src, tgt, fs::path(target).stem().string());
  write_text(out, style_to_json(style, mf.model_id).dump(2) + "\n");
  return 0;
}

// --- apply --------------------------------------------------------------------

int run_apply(const std::string& model_path, const std::string& source, const std::string& style_path,
              bool zero, const std::string& out, int depth, bool preview) {
  const auto mf = load_model(model_path);
  if (zero == !style_path.empty()) throw ArgumentError("apply: give exactly one of --style or --zero");
  const StyleVector style = zero ? StyleVector::zero(mf.model.latent_dim()) : read_style(style_path);
  const auto src = load_image(source).image;
  const auto img = apply_style(mf.model, src, style);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_image(img, out, preview ? 8 : depth);
  return 0;
}

// --- grid ---------------------------------------------------------------------

int run_grid(const std::string& model_path, const std::string& source, int res, const std::string& center,
             int ax, int ay, double range, int thumb, const std::string& out_dir, int depth) {
  const auto mf = load_model(model_path);
  GridSpec spec;
  spec.resolution = res;
  spec.axis_x = ax;
  spec.axis_y = ay;
  spec.range = range;
  spec.thumbnail_width = thumb;
  if (!center.empty() && center != "0") spec.center = read_style(center);
  const auto grid = style_grid(mf.model, load_image(source).image, spec);
  fs::create_directories(out_dir);
  nlohmann::json index = nlohmann::json::array();
  for (int r = 0; r < res; ++r) {
    for (int c = 0; c < res; ++c) {
      char name[64];
      std::snprintf(name, sizeof name, "tile_r%d_c%d.png", r, c);
      save_image(grid.tile(r, c), fs::path(out_dir) / name, depth);
      index.push_back({{"row", r}, {"col", c}, {"file", name}, {"z", grid.point(r, c).values}});
    }
  }
  save_image(grid_mosaic(grid), fs::path(out_dir) / "mosaic.png", 8);
  write_text(fs::path(out_dir) / "grid.json", index.dump(2) + "\n");
  return 0;
}

// --- stylemap -----------------------------------------------------------------

int run_stylemap(const std::string& model_path, const std::string& pairs, const std::string& out) {
  const auto mf = load_model(model_path);
  const auto data = open_frames(pairs, 0, false);
  const auto map = dataset_style_map(mf.model, data);
  write_text(out, style_map_to_json(map, mf.model_id).dump(2) + "\n");
  std::printf("%zu styles\n", map.size());
  return 0;
}

// --- synth --------------------------------------------------------------------

int run_synth(const SynthSpec& spec, const std::string& out, int depth) {
  const auto ds = generate_synthetic(spec);
  write_synthetic(ds, out, depth);
  std::printf("%d pairs written to %s\n", spec.pairs, out.c_str());
  return 0;
}

// --- serve --------------------------------------------------------------------

int run_serve(const std::string& model_path, const std::string& host, int port, const std::string& styles,
              std::size_t max_upload_mb) {
  auto mf = load_model(model_path);
  std::vector<StyleEntry> entries;
  if (!styles.empty()) entries = style_map_from_json(read_json(styles));
  ServiceOptions opts;
  opts.max_upload_bytes = max_upload_mb << 20;
  StyleService service(std::move(mf.model), mf.model_id, std::move(entries), opts);
  httplib::Server server;
  service.mount(server);
  std::fprintf(stderr, "serving model %s on %s:%d\n", service.model_id().c_str(), host.c_str(), port);
  if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"styleflow: learned colour-grading styles"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0: all cores)");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a paired dataset");
  train_cmd->add_option("--pairs", ta.pairs, "Dataset directory")->required();
  train_cmd->add_option("--out", ta.out, "Model file")->required();
  train_cmd->add_option("--variant", ta.variant, "Latent dimension: 2, 3 or 4");
  train_cmd->add_option("--degree", ta.degree, "PCC degree (1-4)");
  train_cmd->add_option("--epochs", ta.epochs);
  train_cmd->add_option("--lr", ta.lr, "Initial learning rate");
  train_cmd->add_option("--lr-step", ta.lr_step, "Epochs between learning-rate decays");
  train_cmd->add_option("--lr-factor", ta.lr_factor, "Learning-rate decay factor");
  train_cmd->add_option("--seed", ta.seed);
  train_cmd->add_option("--pixels", ta.pixels, "Pixels sampled per frame and step");
  train_cmd->add_option("--frames-per-batch", ta.frames_per_batch);
  train_cmd->add_option("--passes", ta.passes, "Sweeps over the training pairs per epoch");
  train_cmd->add_option("--hidden", ta.hidden, "Subnet hidden width");
  train_cmd->add_option("--blocks", ta.blocks, "Invertible blocks");
  train_cmd->add_option("--report", ta.report, "Report path (default: <out>.report.jsonl)");
  train_cmd->add_flag("--nll-only", ta.nll_only, "Disable the reconstruction loss");
  train_cmd->add_flag("--swap", ta.swap, "Exchange source and target of every pair");
  train_cmd->add_flag("--quiet", ta.quiet);

  std::string model, source, target, pairs, out, style, split = "test", center, host = "127.0.0.1", styles;
  bool zero = false, preview = false, per_pair = false;
  int depth = 16, res = 5, ax = 0, ay = 1, thumb = 0, port = 8080;
  double range = 2.0;
  std::size_t max_upload_mb = 64;

  auto* extract_cmd = app.add_subcommand("extract", "Extract style vectors");
  extract_cmd->add_option("--model", model)->required();
  extract_cmd->add_option("--source", source);
  extract_cmd->add_option("--target", target);
  extract_cmd->add_option("--pairs", pairs, "Dataset directory: one record per pair, one per line");
  extract_cmd->add_option("--out", out)->required();

  auto* apply_cmd = app.add_subcommand("apply", "Render a source image in a style");
  apply_cmd->add_option("--model", model)->required();
  apply_cmd->add_option("--source", source)->required();
  apply_cmd->add_option("--style", style, "Style record");
  apply_cmd->add_flag("--zero", zero, "Use the zero (average) style");
  apply_cmd->add_option("--out", out)->required();
  apply_cmd->add_option("--depth", depth, "PNG bit depth")->check(CLI::IsMember({8, 16}));
  apply_cmd->add_flag("--preview", preview, "8-bit output");

  auto* eval_cmd = app.add_subcommand("eval", "Mean and 5th-percentile PSNR over a split");
  eval_cmd->add_option("--model", model)->required();
  eval_cmd->add_option("--pairs", pairs)->required();
  eval_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "test", "all"}));
  eval_cmd->add_flag("--per-pair", per_pair);
  std::string baseline;
  int pca_k = 3;
  eval_cmd->add_option("--baseline", baseline, "Also score: pcc-oracle or pca")
      ->check(CLI::IsMember({"pcc-oracle", "pca"}));
  eval_cmd->add_option("--pca-k", pca_k);

  auto* grid_cmd = app.add_subcommand("grid", "Render a grid over two style axes");
  grid_cmd->add_option("--model", model)->required();
  grid_cmd->add_option("--source", source)->required();
  grid_cmd->add_option("--res", res);
  grid_cmd->add_option("--center", center, "0 or a style record");
  grid_cmd->add_option("--axis-x", ax);
  grid_cmd->add_option("--axis-y", ay);
  grid_cmd->add_option("--range", range);
  grid_cmd->add_option("--thumb", thumb, "Thumbnail width");
  grid_cmd->add_option("--out", out, "Output directory")->required();
  grid_cmd->add_option("--depth", depth)->check(CLI::IsMember({8, 16}));

  auto* map_cmd = app.add_subcommand("stylemap", "Extract the style of every pair");
  map_cmd->add_option("--model", model)->required();
  map_cmd->add_option("--pairs", pairs)->required();
  map_cmd->add_option("--out", out)->required();

  SynthSpec spec;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic paired dataset");
  synth_cmd->add_option("--factors", spec.factors)->check(CLI::Range(0, 3));
  synth_cmd->add_option("--pairs", spec.pairs);
  synth_cmd->add_option("--width", spec.width);
  synth_cmd->add_option("--height", spec.height);
  synth_cmd->add_option("--seed", spec.seed);
  synth_cmd->add_option("--clusters", spec.clusters);
  synth_cmd->add_option("--out", out)->required();
  synth_cmd->add_option("--depth", depth)->check(CLI::IsMember({8, 16}));

  auto* serve_cmd = app.add_subcommand("serve", "Serve the grading HTTP API");
  serve_cmd->add_option("--model", model)->required();
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--styles", styles, "Style map for the scatter endpoint");
  serve_cmd->add_option("--max-upload-mb", max_upload_mb);

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) set_worker_count(threads);

  try {
    if (*train_cmd) return run_train(ta);
    if (*extract_cmd) return run_extract(model, source, target, pairs, out);
    if (*apply_cmd) return run_apply(model, source, style, zero, out, depth, preview);
    if (*eval_cmd) {
      const auto mf = load_model(model);
      const auto data = open_frames(pairs, 0, false);
      std::vector<std::size_t> all;
      const auto& idx = split_indices(data, split, all);
      print_eval(evaluate(mf.model, data, idx), per_pair);
      if (baseline == "pcc-oracle") {
        std::printf("pcc oracle: ");
        print_eval(evaluate_pcc_oracle(data, idx, mf.model.config.degree), false);
      } else if (baseline == "pca") {
        std::printf("pca k=%d: ", pca_k);
        print_eval(evaluate_pca_baseline(fit_pca_baseline(data, pca_k, mf.model.config.degree), data, idx),
                   false);
      }
      return 0;
    }
    if (*grid_cmd) return run_grid(model, source, res, center, ax, ay, range, thumb, out, depth);
    if (*map_cmd) return run_stylemap(model, pairs, out);
    if (*synth_cmd) return run_synth(spec, out, depth);
    if (*serve_cmd) return run_serve(model, host, port, styles, max_upload_mb);
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDiverged;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
