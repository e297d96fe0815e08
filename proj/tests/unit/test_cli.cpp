#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>

#include <json.hpp>

#include "capnet/classifier.hpp"
#include "capnet/config.hpp"
#include "capnet/error.hpp"
#include "capnet/frame_io.hpp"
#include "capnet/pipeline.hpp"
#include "capnet/report.hpp"
#include "capnet/schema.hpp"
#include "capnet/synth.hpp"
#include "testutil.hpp"

using namespace capnet;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("capnet_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Run {
  int code = -1;
  std::string output;
};

#ifdef CAPNET_NO_CLI
#define CAPNET_CLI_PATH "false"
#endif

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(CAPNET_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p)) r.output += buf;
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

// Three clean tubes on a small frame; the zero model accepts every proposal.
synth::SceneSpec three_tubes() {
  synth::SceneSpec spec;
  spec.width = 240;
  spec.height = 180;
  spec.frames = 20;
  spec.seed = 3;
  const double xs[3] = {50, 120, 190};
  for (int k = 0; k < 3; ++k) {
    synth::TubeSpec t;
    t.path = synth::straight_path({xs[k], 90}, 60, 1.3 + 0.2 * k);
    t.speed = 1.0 + 0.3 * k;
    t.gap_fraction = 0.3;
    t.gap_seed = static_cast<std::uint64_t>(k);
    spec.tubes.push_back(t);
  }
  return spec;
}

json strip_timing(const std::string& text) {
  json j = json::parse(text);
  j.erase("timing");
  return j;
}

}  // namespace

// ---- config ----

TEST(Config, DefaultsRoundTrip) {
  const config::Config c;
  const std::string text = config::dump_config(c);
  EXPECT_EQ(config::dump_config(config::parse_config(text)), text);
}

TEST(Config, ShippedDefaultMatchesBuiltIn) {
  const std::string shipped = io::read_file(fs::path(CAPNET_SOURCE_DIR) / "config" / "default.json");
  EXPECT_EQ(json::parse(shipped), json::parse(config::dump_config(config::Config{})));
}

TEST(Config, PartialSectionsKeepDefaults) {
  const auto c = config::parse_config(R"({"pipeline": {"fps": 50, "thresholds": {"t1": 0.4}}, "train": {"epochs": 3}})");
  EXPECT_EQ(c.pipeline.fps, 50.0);
  EXPECT_EQ(c.pipeline.thresholds.t1, 0.4);
  EXPECT_EQ(c.pipeline.thresholds.t2, 0.8);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.pipeline.salience.ssim_window, pipeline::PipelineConfig{}.salience.ssim_window);
}

TEST(Config, RejectsUnknownKeysTypesAndValues) {
  EXPECT_THROW(config::parse_config(R"({"pipline": {}})"), ParameterError);
  EXPECT_THROW(config::parse_config(R"({"pipeline": {"fsp": 30}})"), ParameterError);
  EXPECT_THROW(config::parse_config(R"({"pipeline": {"fps": "fast"}})"), ParameterError);
  EXPECT_THROW(config::parse_config(R"({"pipeline": {"threads": 0}})"), ParameterError);
  EXPECT_THROW(config::parse_config(R"({"pipeline": {"thresholds": {"t1": 0.9}}})"), ParameterError);
  EXPECT_THROW(config::parse_config(R"({"pipeline": {"velocity": {"contrast_mode": "sideways"}}})"), ParameterError);
  EXPECT_THROW(config::parse_config(R"({"dataset_size": 5})"), ParameterError);
  EXPECT_THROW(config::parse_config("{not json"), FormatError);
}

TEST(Config, SceneRoundTrip) {
  const auto spec = three_tubes();
  const std::string text = config::dump_scene(spec);
  EXPECT_EQ(config::dump_scene(config::parse_scene(text)), text);
  const auto a = synth::render_video(spec);
  const auto b = synth::render_video(config::parse_scene(text));
  EXPECT_TRUE(a.frames.back() == b.frames.back());
}

TEST(Config, TruthIsSchemaValid) {
  const auto v = synth::render_video(three_tubes());
  const auto errors = schema::validate(config::dump_truth(v.truth), schema::load_schema("truth.schema.json"));
  EXPECT_TRUE(errors.empty()) << (errors.empty() ? "" : errors.front());
}

// ---- frame I/O ----

TEST(FrameIo, PpmRoundTripIsExactOnTheByteGrid) {
  TempDir dir("ppm");
  Frame f(17, 9, 3);
  Rng rng(2);
  for (int c = 0; c < 3; ++c)
    for (float& v : f.plane(c).values()) v = static_cast<float>(rng.uniform_int(0, 255)) / 255.f;
  io::write_image(f, dir.path / "a.ppm");
  EXPECT_TRUE(io::read_image(dir.path / "a.ppm") == f);
  const Frame g = gray_frame(f.plane(0));
  io::write_image(g, dir.path / "a.pgm");
  EXPECT_TRUE(io::read_image(dir.path / "a.pgm") == g);
}

TEST(FrameIo, PngRoundTrip) {
  if (!io::png_supported()) GTEST_SKIP() << "built without libpng";
  TempDir dir("png");
  Frame f(11, 7, 3);
  Rng rng(3);
  for (int c = 0; c < 3; ++c)
    for (float& v : f.plane(c).values()) v = static_cast<float>(rng.uniform_int(0, 255)) / 255.f;
  io::write_image(f, dir.path / "a.png");
  EXPECT_TRUE(io::read_image(dir.path / "a.png") == f);
}

TEST(FrameIo, ReadsCommentsAndSixteenBit) {
  TempDir dir("p6");
  std::string s = "P6\n# made by hand\n2 1\n65535\n";
  for (int v : {65535, 0, 32768, 0, 65535, 257}) {
    s.push_back(static_cast<char>(v >> 8));
    s.push_back(static_cast<char>(v & 0xff));
  }
  write_text(dir.path / "x.ppm", s);
  const Frame f = io::read_image(dir.path / "x.ppm");
  ASSERT_EQ(f.width(), 2);
  EXPECT_FLOAT_EQ(f.plane(0)(0, 0), 1.f);
  EXPECT_FLOAT_EQ(f.plane(1)(0, 0), 0.f);
  EXPECT_NEAR(f.plane(2)(0, 0), 32768.0 / 65535.0, 1e-6);
  EXPECT_NEAR(f.plane(2)(1, 0), 257.0 / 65535.0, 1e-6);
}

TEST(FrameIo, MalformedFiles) {
  TempDir dir("bad");
  write_text(dir.path / "a.ppm", "P6\n4 4\n255\nabc");
  EXPECT_THROW(io::read_image(dir.path / "a.ppm"), FormatError);
  write_text(dir.path / "b.ppm", "P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(io::read_image(dir.path / "b.ppm"), FormatError);
  EXPECT_ANY_THROW(io::read_image(dir.path / "missing.ppm"));
}

TEST(FrameIo, DirectoryListing) {
  TempDir dir("list");
  const Frame f(8, 8, 3, 0.5f);
  io::write_image(f, dir.path / io::frame_name(2));
  io::write_image(f, dir.path / io::frame_name(0));
  io::write_image(f, dir.path / io::frame_name(10));
  write_text(dir.path / "notes.txt", "x");
  write_text(dir.path / "frame_1.ppm", "x");
  const auto names = io::list_frames(dir.path);
  ASSERT_EQ(names.size(), 3u);
  EXPECT_EQ(names[0].filename(), "frame_000000.ppm");
  EXPECT_EQ(names[2].filename(), "frame_000010.ppm");
  EXPECT_EQ(io::read_frame_dir(dir.path).size(), 3u);

  io::write_image(Frame(8, 9, 3), dir.path / io::frame_name(11));
  EXPECT_THROW(io::read_frame_dir(dir.path), ParameterError);
  io::write_image(gray_frame(f.plane(0)), dir.path / io::frame_name(2, "pgm"));
  EXPECT_THROW(io::list_frames(dir.path), ParameterError);

  TempDir empty("empty");
  EXPECT_THROW(io::read_frame_dir(empty.path), ParameterError);
}

// ---- schema validator ----

TEST(Schema, Keywords) {
  const std::string s = R"({
    "type": "object", "required": ["a"], "additionalProperties": false,
    "properties": {
      "a": {"type": "integer", "minimum": 0, "maximum": 10},
      "b": {"type": "array", "minItems": 1, "maxItems": 2, "items": {"type": "number", "exclusiveMinimum": 0}},
      "c": {"enum": ["x", "y"]},
      "d": {"type": ["string", "null"], "minLength": 2},
      "e": {"const": 1}
    }})";
  EXPECT_TRUE(schema::validate(R"({"a": 3, "b": [0.5], "c": "x", "d": null, "e": 1})", s).empty());
  EXPECT_FALSE(schema::validate(R"({"b": [1]})", s).empty());
  EXPECT_FALSE(schema::validate(R"({"a": 11})", s).empty());
  EXPECT_FALSE(schema::validate(R"({"a": 1.5})", s).empty());
  EXPECT_FALSE(schema::validate(R"({"a": 1, "b": []})", s).empty());
  EXPECT_FALSE(schema::validate(R"({"a": 1, "b": [1, 2, 3]})", s).empty());
  EXPECT_FALSE(schema::validate(R"({"a": 1, "b": [0]})", s).empty());
  EXPECT_FALSE(schema::validate(R"({"a": 1, "c": "z"})", s).empty());
  EXPECT_FALSE(schema::validate(R"({"a": 1, "d": "q"})", s).empty());
  EXPECT_FALSE(schema::validate(R"({"a": 1, "e": 2})", s).empty());
  EXPECT_FALSE(schema::validate(R"({"a": 1, "z": 0})", s).empty());
}

// ---- report ----

TEST(Report, SchemaValidAndDeterministic) {
  const auto v = synth::render_video(three_tubes());
  const auto model = cnn::zero_model();
  const pipeline::PipelineConfig cfg;
  const auto a = pipeline::analyze(v.frames, model, cfg, "three");
  const auto b = pipeline::analyze(v.frames, model, cfg, "three");
  const std::string ja = report::report_json(a.report);
  const auto errors = schema::validate(ja, schema::load_schema("report.schema.json"));
  EXPECT_TRUE(errors.empty()) << (errors.empty() ? "" : errors.front());
  EXPECT_EQ(report::report_json(a.report, false), report::report_json(b.report, false));

  for (const auto& rec : a.records) {
    const std::string csv = report::capillary_csv(rec);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "frame,area_px,hematocrit,mean_magnitude,angle");
    EXPECT_EQ(static_cast<int>(std::count(csv.begin(), csv.end(), '\n')), rec.frames() + 1);
  }
}

TEST(Report, BackgroundOnlyVideo) {
  synth::SceneSpec spec;
  spec.width = 160;
  spec.height = 120;
  spec.frames = 12;
  const auto v = synth::render_video(spec);
  const auto a = pipeline::analyze(v.frames, cnn::zero_model(), pipeline::PipelineConfig{});
  EXPECT_TRUE(a.report.capillaries.empty());
  EXPECT_EQ(a.report.total_capillary_density, 0.0);
  EXPECT_EQ(a.report.functional_capillary_density, 0.0);
}

// ---- command line ----

TEST(Cli, SynthAnalyzeEndToEnd) {
  TempDir dir("e2e");
  write_text(dir.path / "scene.json", config::dump_scene(three_tubes()));
  cnn::save_model_file(cnn::zero_model(), (dir.path / "zero.capn").string());

  auto r = run_cli("synth --spec " + (dir.path / "scene.json").string() + " --out " + (dir.path / "video").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(io::list_frames(dir.path / "video" / "frames").size(), 20u);
  const json truth = json::parse(io::read_file(dir.path / "video" / "truth.json"));
  EXPECT_TRUE(schema::validate(truth.dump(), schema::load_schema("truth.schema.json")).empty());
  EXPECT_EQ(truth["tubes"].size(), 3u);

  const std::string base = "analyze " + (dir.path / "video" / "frames").string() + " --model " +
                           (dir.path / "zero.capn").string() + " --video-id v1 --out ";
  r = run_cli(base + (dir.path / "out1").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string rep1 = io::read_file(dir.path / "out1" / "report.json");
  EXPECT_TRUE(schema::validate(rep1, schema::load_schema("report.schema.json")).empty());
  const json j = json::parse(rep1);
  EXPECT_EQ(j["capillaries"].size(), 3u);
  const double gt = truth["mean_density"];
  EXPECT_NEAR(j["total_capillary_density"].get<double>(), gt, 0.2 * gt);
  for (const auto& c : j["capillaries"]) {
    EXPECT_TRUE(fs::exists(dir.path / "out1" / ("capillary_" + std::to_string(c["id"].get<int>()) + ".csv")));
  }
  EXPECT_EQ(io::list_frames(dir.path / "out1" / "overlays").size(), 20u);

  r = run_cli(base + (dir.path / "out2").string() + " --no-overlays");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(strip_timing(io::read_file(dir.path / "out2" / "report.json")), strip_timing(rep1));
  EXPECT_FALSE(fs::exists(dir.path / "out2" / "overlays"));
}

TEST(Cli, SynthSeedChangesPixels) {
  TempDir dir("seed");
  const std::string cfg = (dir.path / "small.json").string();
  write_text(cfg, R"({"synth": {"width": 96, "height": 64, "frames": 2, "max_tubes": 1}})");
  ASSERT_EQ(run_cli("synth --config " + cfg + " --seed 1 --out " + (dir.path / "a").string()).code, 0);
  ASSERT_EQ(run_cli("synth --config " + cfg + " --seed 1 --out " + (dir.path / "b").string()).code, 0);
  ASSERT_EQ(run_cli("synth --config " + cfg + " --seed 2 --out " + (dir.path / "c").string()).code, 0);
  const auto f = [&](const char* d) { return io::read_file(dir.path / d / "frames" / io::frame_name(1)); };
  EXPECT_EQ(f("a"), f("b"));
  EXPECT_NE(f("a"), f("c"));
}

TEST(Cli, TrainOnPatchSet) {
  TempDir dir("train");
  const std::string cfg = (dir.path / "cfg.json").string();
  write_text(cfg, R"({"train": {"epochs": 2, "batch_size": 8}})");
  auto r = run_cli("synth --patches 40 --seed 4 --out " + (dir.path / "patches").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir.path / "patches" / "labels.csv"));
  r = run_cli("train " + (dir.path / "patches").string() + " --config " + cfg + " --out " +
              (dir.path / "m.capn").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NO_THROW(cnn::load_model_file((dir.path / "m.capn").string()));
  const std::string hist = io::read_file(dir.path / "m.capn.history.csv");
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 3);

  // Single-class data set.
  std::string labels = io::read_file(dir.path / "patches" / "labels.csv");
  labels = std::regex_replace(labels, std::regex(",not_capillary"), ",capillary");
  write_text(dir.path / "patches" / "labels.csv", labels);
  r = run_cli("train " + (dir.path / "patches").string() + " --config " + cfg + " --out " +
              (dir.path / "m2.capn").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("capnet:"), std::string::npos);
}

TEST(Cli, BenchReportsPositiveRates) {
  TempDir dir("bench");
  synth::SceneSpec spec;
  spec.width = 160;
  spec.height = 120;
  spec.frames = 8;
  io::write_frame_dir(synth::render_video(spec).frames, dir.path / "frames");
  const auto r = run_cli("bench " + (dir.path / "frames").string() + " --repeat 2");
  ASSERT_EQ(r.code, 0) << r.output;
  const std::regex line(R"(run \d: preprocess ([0-9.]+) fps, roi ([0-9.]+) fps, cnn ([0-9.]+) fps, detection ([0-9.]+) fps)");
  int runs = 0;
  for (std::sregex_iterator it(r.output.begin(), r.output.end(), line), end; it != end; ++it) {
    ++runs;
    for (int k = 1; k <= 4; ++k) EXPECT_GT(std::stod((*it)[k].str()), 0.0);
  }
  EXPECT_EQ(runs, 2);
  EXPECT_NE(r.output.find("full: mask"), std::string::npos);
}

TEST(Cli, Errors) {
  TempDir dir("errors");
  fs::create_directories(dir.path / "empty");
  auto r = run_cli("bench " + (dir.path / "empty").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("capnet:"), std::string::npos);
  r = run_cli("analyze " + (dir.path / "empty").string() + " --model " + (dir.path / "none.capn").string() +
              " --out " + (dir.path / "o").string());
  EXPECT_EQ(r.code, 1);
  r = run_cli("analyze " + (dir.path / "empty").string() + " --out " + (dir.path / "o").string());
  EXPECT_NE(r.code, 0);
  write_text(dir.path / "bad.json", R"({"tubes": [{"path": [[0, 0]]}]})");
  r = run_cli("synth --spec " + (dir.path / "bad.json").string() + " --out " + (dir.path / "s").string());
  EXPECT_EQ(r.code, 1);
  r = run_cli("");
  EXPECT_NE(r.code, 0);
}
