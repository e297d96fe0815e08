// capnet: analyze / train / synth / bench

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "capnet/classifier.hpp"
#include "capnet/config.hpp"
#include "capnet/error.hpp"
#include "capnet/frame_io.hpp"
#include "capnet/pipeline.hpp"
#include "capnet/report.hpp"
#include "capnet/schema.hpp"
#include "capnet/synth.hpp"

namespace fs = std::filesystem;
using namespace capnet;

namespace {

config::Config load_or_default(const std::string& path) {
  if (path.empty()) return {};
  if (!fs::exists(path)) throw ParameterError("config not found: " + path);
  return config::load_config(path);
}

// labels.csv rows: file,label with label capillary | not_capillary
std::vector<cnn::Patch> read_patch_dir(const fs::path& dir) {
  const fs::path index = dir / "labels.csv";
  if (!fs::exists(index)) throw ParameterError("dataset has no labels.csv: " + dir.string());
  std::istringstream in(io::read_file(index));
  std::string line;
  std::vector<cnn::Patch> out;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (row == 1 && line.rfind("file,", 0) == 0)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("labels.csv:" + std::to_string(row) + ": expected file,label");
    const std::string file = line.substr(0, comma);
    const std::string label = line.substr(comma + 1);
    cnn::Label l;
    if (label == "capillary") {
      l = cnn::Label::Capillary;
    } else if (label == "not_capillary") {
      l = cnn::Label::NotCapillary;
    } else {
      throw FormatError("labels.csv:" + std::to_string(row) + ": unknown label '" + label + "'");
    }
    Frame f = io::read_image(dir / file);
    if (f.width() != cnn::kPatchSize || f.height() != cnn::kPatchSize) f = resize_bilinear(f, cnn::kPatchSize, cnn::kPatchSize);
    out.push_back(cnn::patch_from_frame(f, l));
  }
  return out;
}

void write_patch_dir(const std::vector<cnn::Patch>& patches, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream labels;
  labels << "file,label\n";
  for (std::size_t i = 0; i < patches.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "patch_%06zu.ppm", i);
    io::write_image(cnn::patch_to_frame(patches[i]), dir / name);
    labels << name << ',' << (patches[i].label == cnn::Label::Capillary ? "capillary" : "not_capillary") << '\n';
  }
  io::write_file_atomic(dir / "labels.csv", labels.str());
}

void write_truth(const synth::GroundTruth& truth, const fs::path& dir) {
  const std::string doc = config::dump_truth(truth);
  const auto errors = schema::validate(doc, schema::load_schema("truth.schema.json"));
  if (!errors.empty()) throw FormatError("ground truth fails its schema: " + errors.front());
  io::write_file_atomic(dir / "truth.json", doc);
  Plane lumen(truth.width, truth.height);
  for (std::size_t i = 0; i < lumen.size(); ++i) lumen.values()[i] = truth.lumen.values()[i] ? 1.0f : 0.0f;
  io::write_image(gray_frame(std::move(lumen)), dir / "lumen.pgm");
}

int cmd_analyze(const std::string& input, const std::string& cfg_path, const std::string& model_path,
                const std::string& out, int threads, bool overlays, std::string video_id) {
  auto cfg = load_or_default(cfg_path);
  if (threads > 0) cfg.pipeline.threads = threads;
  if (model_path.empty() || !fs::exists(model_path)) throw ParameterError("model not found: " + model_path);
  const auto model = cnn::load_model_file(model_path);
  const auto frames = io::read_frame_dir(input);
  if (frames.size() < 6) throw ParameterError("analyze needs at least 6 frames, found " + std::to_string(frames.size()));
  if (video_id.empty()) video_id = fs::path(input).lexically_normal().filename().string();
  if (video_id.empty()) video_id = "video";
  const auto analysis = pipeline::analyze(frames, model, cfg.pipeline, video_id);
  report::write_analysis(analysis, frames, out, overlays);
  std::printf("%s: %zu capillaries, total density %.4f, functional density %.4f\n", video_id.c_str(),
              analysis.report.capillaries.size(), analysis.report.total_capillary_density,
              analysis.report.functional_capillary_density);
  return 0;
}

int cmd_train(const std::string& dataset, const std::string& cfg_path, const std::string& out, std::optional<std::uint64_t> seed) {
  auto cfg = load_or_default(cfg_path);
  if (seed) cfg.train.seed = *seed;
  const auto data = read_patch_dir(dataset);
  auto result = cnn::train(cnn::init_model(cfg.train.seed), data, cfg.train);
  cnn::save_model_file(result.model, out);
  io::write_file_atomic(out + ".history.csv", report::history_csv(result.history));
  const auto& best = result.history[static_cast<std::size_t>(result.best_epoch - 1)];
  std::printf("best epoch %d: val accuracy %.4f, val loss %.4f\n", result.best_epoch, best.val_accuracy, best.val_loss);
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& cfg_path, const std::string& out,
              std::optional<std::uint64_t> seed, int patches) {
  const auto cfg = load_or_default(cfg_path);
  if (patches > 0) {
    write_patch_dir(synth::make_patch_dataset(cfg.distribution, patches, seed.value_or(0)), out);
    std::printf("wrote %d patches to %s\n", patches, out.c_str());
    return 0;
  }
  synth::SceneSpec spec;
  if (!spec_path.empty()) {
    spec = config::load_scene(spec_path);
    if (seed) spec.seed = *seed;
  } else {
    spec = synth::random_scene(cfg.distribution, seed.value_or(0));
  }
  const auto video = synth::render_video(spec);
  fs::create_directories(out);
  io::write_frame_dir(video.frames, fs::path(out) / "frames");
  io::write_file_atomic(fs::path(out) / "scene.json", config::dump_scene(spec));
  write_truth(video.truth, out);
  std::printf("wrote %zu frames, %zu tubes to %s\n", video.frames.size(), video.truth.tubes.size(), out.c_str());
  return 0;
}

int cmd_bench(const std::string& input, const std::string& cfg_path, const std::string& model_path, int repeat) {
  const auto cfg = load_or_default(cfg_path);
  const auto frames = io::read_frame_dir(input);
  const auto model = model_path.empty() ? cnn::init_model(0) : cnn::load_model_file(model_path);
  std::printf("frames %zu, %dx%d\n", frames.size(), frames.front().width(), frames.front().height());
  for (int r = 0; r < repeat; ++r) {
    pipeline::Detector det(cfg.pipeline, model, frames.front().width(), frames.front().height());
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& f : frames) det.push(f);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto& t = det.timing();
    const double n = static_cast<double>(frames.size());
    auto fps = [&](double s) { return s > 0.0 ? n / s : 0.0; };
    std::printf("run %d: preprocess %.1f fps, roi %.1f fps, cnn %.1f fps, detection %.1f fps (wall %.2f s)\n", r + 1,
                fps(t.preprocess), fps(t.roi), fps(t.cnn), fps(t.preprocess + t.roi + t.cnn), wall);
  }
  if (frames.size() >= 6) {
    const auto a = pipeline::analyze(frames, model, cfg.pipeline, "bench");
    const auto& s = a.report.seconds_per_frame;
    auto fps = [](double sec) { return sec > 0.0 ? 1.0 / sec : 0.0; };
    std::printf("full: mask %.1f fps, track %.1f fps, flow %.1f fps, metrics %.1f fps\n", fps(s.mask), fps(s.track),
                fps(s.flow), fps(s.metrics));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capillary video analysis"};
  app.require_subcommand(1);

  std::string input, cfg_path, model_path, out, spec_path, video_id;
  int threads = 0, patches = 0, repeat = 2;
  bool no_overlays = false;
  std::optional<std::uint64_t> seed;

  auto* analyze = app.add_subcommand("analyze", "detect capillaries and write report, CSV series and overlays");
  analyze->add_option("input", input, "directory of frame_NNNNNN images")->required();
  analyze->add_option("--config", cfg_path, "JSON config");
  analyze->add_option("--model", model_path, "model file")->required();
  analyze->add_option("--out", out, "output directory")->required();
  analyze->add_option("--threads", threads, "worker threads for per-capillary measurement");
  analyze->add_option("--video-id", video_id, "id written to the report");
  analyze->add_flag("--no-overlays", no_overlays, "skip overlay frames");

  auto* train = app.add_subcommand("train", "train the patch classifier");
  train->add_option("dataset", input, "directory with labels.csv and patch images")->required();
  train->add_option("--config", cfg_path, "JSON config");
  train->add_option("--out", out, "model file to write")->required();
  train->add_option("--seed", seed, "overrides train.seed");

  auto* synth_cmd = app.add_subcommand("synth", "render a synthetic video or patch dataset");
  synth_cmd->add_option("--spec", spec_path, "scene JSON; a random scene from the config is drawn when absent");
  synth_cmd->add_option("--config", cfg_path, "JSON config");
  synth_cmd->add_option("--out", out, "output directory")->required();
  synth_cmd->add_option("--seed", seed, "scene or dataset seed");
  synth_cmd->add_option("--patches", patches, "write a labelled patch dataset of this size instead");

  auto* bench = app.add_subcommand("bench", "per-stage throughput on a frame directory");
  bench->add_option("input", input, "directory of frame_NNNNNN images")->required();
  bench->add_option("--config", cfg_path, "JSON config");
  bench->add_option("--model", model_path, "model file; a random model is timed when absent");
  bench->add_option("--repeat", repeat, "timing runs")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*analyze) return cmd_analyze(input, cfg_path, model_path, out, threads, !no_overlays, video_id);
    if (*train) return cmd_train(input, cfg_path, out, seed);
    if (*synth_cmd) return cmd_synth(spec_path, cfg_path, out, seed, patches);
    if (*bench) return cmd_bench(input, cfg_path, model_path, repeat);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "capnet: %s\n", e.what());
    return 1;
  }
  return 2;
}
