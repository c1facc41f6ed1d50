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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "styleflow/container.hpp"
#include "styleflow/image_io.hpp"
#include "styleflow/service.hpp"
#include "styleflow/training.hpp"

namespace styleflow {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

struct RunResult {
  int code = -1;
  std::string output;
};

// Shared across tests: a small synthetic dataset and a briefly trained model.
class Cli : public ::testing::Test {
 protected:
  static fs::path dir() { return fs::temp_directory_path() / "styleflow_cli_test"; }

  static RunResult run(const std::string& args) {
    const auto log = dir() / "last.log";
    const std::string cmd = std::string(STYLEFLOW_CLI) + " --threads 1 " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
  }

  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
    const auto r = run("synth --factors 3 --pairs 6 --width 24 --height 16 --seed 5 --out " + (dir() / "data").string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto t = run("train --pairs " + (dir() / "data").string() + " --out " + (dir() / "m.sfm").string() +
                       " --epochs 1 --pixels 128 --hidden 8 --blocks 2 --seed 3 --quiet");
    ASSERT_EQ(t.code, 0) << t.output;
  }
  static void TearDownTestSuite() { fs::remove_all(dir()); }

  static std::string data() { return (dir() / "data").string(); }
  static std::string model() { return (dir() / "m.sfm").string(); }
  static std::string source() { return (dir() / "data" / "source" / "frame_00000.png").string(); }
  static std::string target() { return (dir() / "data" / "target" / "frame_00000.png").string(); }
  static std::string path(const std::string& name) { return (dir() / name).string(); }
};

TEST_F(Cli, SynthEmitsManifestAndGroundTruth) {
  EXPECT_TRUE(fs::exists(dir() / "data" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir() / "data" / "latents.csv"));
  EXPECT_TRUE(fs::exists(dir() / "data" / "matrices.txt"));
  int sources = 0;
  for (const auto& e : fs::directory_iterator(dir() / "data" / "source")) sources += e.path().extension() == ".png";
  EXPECT_EQ(sources, 6);
  const auto r = run("synth --factors 4 --out " + path("bad"));
  EXPECT_NE(r.code, 0);
}

TEST_F(Cli, TrainWritesModelAndReport) {
  EXPECT_TRUE(fs::exists(model()));
  std::ifstream report(model() + ".report.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(report, line)) {
    EXPECT_TRUE(nlohmann::json::accept(line));
    ++lines;
  }
  EXPECT_EQ(lines, 2);  // one epoch plus the summary
}

TEST_F(Cli, TrainZeroEpochs) {
  const auto r = run("train --pairs " + data() + " --out " + path("zero.sfm") + " --epochs 0 --hidden 8 --blocks 2");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("final mean test PSNR"), std::string::npos) << r.output;
  EXPECT_TRUE(load_model(path("zero.sfm")).model.actnorm_ready());
}

TEST_F(Cli, TrainIsDeterministic) {
  const std::string common = " --epochs 1 --pixels 128 --hidden 8 --blocks 2 --seed 3 --quiet --variant 4";
  ASSERT_EQ(run("train --pairs " + data() + " --out " + path("d1.sfm") + common).code, 0);
  ASSERT_EQ(run("train --pairs " + data() + " --out " + path("d2.sfm") + common).code, 0);
  EXPECT_EQ(slurp(path("d1.sfm")), slurp(path("d2.sfm")));
  const auto strip_seconds = [](const std::string& file) {
    std::ifstream is(file);
    std::string line, out;
    while (std::getline(is, line)) {
      auto j = nlohmann::json::parse(line);
      j.erase("seconds");
      out += j.dump();
    }
    return out;
  };
  EXPECT_EQ(strip_seconds(path("d1.sfm") + ".report.jsonl"), strip_seconds(path("d2.sfm") + ".report.jsonl"));
}

TEST_F(Cli, BadInputsExitWithCodeTwo) {
  const auto r = run("train --pairs " + path("no_such_dir") + " --out " + path("x.sfm"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("no_such_dir"), std::string::npos) << r.output;
  EXPECT_EQ(run("apply --model " + path("missing.sfm") + " --source " + source() + " --zero --out " + path("o.png")).code, 2);
  EXPECT_EQ(run("apply --model " + model() + " --source " + source() + " --out " + path("o.png")).code, 2);
  EXPECT_EQ(run("eval --model " + source() + " --pairs " + data()).code, 2);
}

TEST_F(Cli, ExtractSingleAndBatch) {
  ASSERT_EQ(run("extract --model " + model() + " --source " + source() + " --target " + target() + " --out " +
                path("s.json")).code, 0);
  const auto style = style_from_json(nlohmann::json::parse(slurp(path("s.json"))));
  EXPECT_EQ(style.dims(), 3);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("s.json")))["model_id"], load_model(model()).model_id);

  ASSERT_EQ(run("extract --model " + model() + " --pairs " + data() + " --out " + path("all.jsonl")).code, 0);
  std::istringstream is(slurp(path("all.jsonl")));
  std::string line;
  int records = 0;
  while (std::getline(is, line)) {
    EXPECT_EQ(style_from_json(nlohmann::json::parse(line)).dims(), 3);
    ++records;
  }
  EXPECT_EQ(records, 6);

  const auto two = run("train --pairs " + data() + " --out " + path("v2.sfm") + " --epochs 0 --variant 2 --hidden 8 --blocks 2");
  ASSERT_EQ(two.code, 0) << two.output;
  ASSERT_EQ(run("extract --model " + path("v2.sfm") + " --source " + source() + " --target " + target() + " --out " +
                path("s2.json")).code, 0);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("s2.json")))["dims"], 2);
}

TEST_F(Cli, ApplyOfExtractedStyleMatchesEvaluate) {
  ASSERT_EQ(run("extract --model " + model() + " --source " + source() + " --target " + target() + " --out " +
                path("e.json")).code, 0);
  ASSERT_EQ(run("apply --model " + model() + " --source " + source() + " --style " + path("e.json") + " --out " +
                path("e.png")).code, 0);
  const auto mf = load_model(model());
  PairedFrames one;
  one.frames.push_back({"p", load_image(source()).image, load_image(target()).image});
  const double reference = evaluate(mf.model, one, {0}).psnr[0];
  EXPECT_NEAR(psnr(load_image(path("e.png")).image, one.frames[0].target), reference, 0.05);
}

TEST_F(Cli, EvalPrintsMeanAndPercentile) {
  const auto r = run("eval --model " + model() + " --pairs " + data() + " --split all --per-pair --baseline pcc-oracle");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("frame_00005"), std::string::npos);
  EXPECT_NE(r.output.find("mean PSNR"), std::string::npos);
  EXPECT_NE(r.output.find("5th percentile"), std::string::npos);
  EXPECT_NE(r.output.find("pcc oracle"), std::string::npos);
}

TEST_F(Cli, GridCentreEqualsApplyZero) {
  ASSERT_EQ(run("apply --model " + model() + " --source " + source() + " --zero --out " + path("zero.png")).code, 0);
  ASSERT_EQ(run("grid --model " + model() + " --source " + source() + " --res 3 --center 0 --out " + path("grid")).code, 0);
  EXPECT_EQ(slurp(path("grid/tile_r1_c1.png")), slurp(path("zero.png")));
  EXPECT_TRUE(fs::exists(path("grid/mosaic.png")));
  EXPECT_EQ(nlohmann::json::parse(slurp(path("grid/grid.json"))).size(), 9u);
}

TEST_F(Cli, ApplyZeroEqualsServiceMap) {
  ASSERT_EQ(run("apply --model " + model() + " --source " + source() + " --zero --out " + path("z.png")).code, 0);
  auto mf = load_model(model());
  StyleService service(std::move(mf.model), mf.model_id);
  httplib::Server server;
  service.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  auto created = client.Post("/sessions", slurp(source()), "image/png");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 201);
  const auto id = nlohmann::json::parse(created->body)["session_id"].get<std::string>();
  auto map = client.Get("/sessions/" + id + "/map?z=0,0,0");
  server.stop();
  worker.join();
  ASSERT_TRUE(map);
  EXPECT_EQ(map->body, slurp(path("z.png")));
}

TEST_F(Cli, StylemapCoversDataset) {
  ASSERT_EQ(run("stylemap --model " + model() + " --pairs " + data() + " --out " + path("map.json")).code, 0);
  const auto map = style_map_from_json(nlohmann::json::parse(slurp(path("map.json"))));
  EXPECT_EQ(map.size(), 6u);
}

}  // namespace
}  // namespace styleflow
