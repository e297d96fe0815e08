#include "capnet/config.hpp"

#include <set>

#include <json.hpp>

#include "capnet/error.hpp"
#include "capnet/frame_io.hpp"

namespace capnet::config {

using json = nlohmann::ordered_json;

namespace {

// Strict reader over one JSON object: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ParameterError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ParameterError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ParameterError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ParameterError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ParameterError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ParameterError(path_ + "." + key + ": wrong type");
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    seen_.erase(key);
    get(key, v);
    out = v;
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ParameterError(path_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

imgproc::ContrastMode contrast_mode(const std::string& s) {
  if (s == "dark_tail") return imgproc::ContrastMode::DarkTail;
  if (s == "symmetric") return imgproc::ContrastMode::Symmetric;
  throw ParameterError("contrast_mode must be dark_tail or symmetric");
}

const char* contrast_name(imgproc::ContrastMode m) {
  return m == imgproc::ContrastMode::DarkTail ? "dark_tail" : "symmetric";
}

void read_area(Section s, roi::AreaBounds& a) {
  s.get("min_area", a.min_area);
  s.get("max_area", a.max_area);
  s.finish();
}

json area_json(const roi::AreaBounds& a) { return {{"min_area", a.min_area}, {"max_area", a.max_area}}; }

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

void read_pipeline(Section s, pipeline::PipelineConfig& c) {
  s.get("fps", c.fps);
  s.get("pixel_pitch_um", c.pixel_pitch_um);
  s.get("median_kernel", c.median_kernel);
  s.get("background_blur_window", c.background_blur_window);
  {
    auto g = s.sub("gmm");
    g.get("max_components", c.gmm.max_components);
    g.get("learning_rate", c.gmm.learning_rate);
    g.get("variance_threshold", c.gmm.variance_threshold);
    g.get("background_ratio", c.gmm.background_ratio);
    g.get("variance_init", c.gmm.variance_init);
    g.get("variance_min", c.gmm.variance_min);
    g.get("variance_max", c.gmm.variance_max);
    g.get("complexity_prior", c.gmm.complexity_prior);
    g.finish();
  }
  {
    auto g = s.sub("salience");
    g.get("ssim_window", c.salience.ssim_window);
    g.get("ssim_threshold", c.salience.ssim_threshold);
    g.get("trim_window_halo", c.salience.trim_window_halo);
    read_area(g.sub("area"), c.salience.area);
    g.finish();
  }
  {
    auto g = s.sub("motion");
    g.get("noise_floor", c.motion.noise_floor);
    read_area(g.sub("area"), c.motion.area);
    g.finish();
  }
  s.get("merge_iou", c.merge_iou);
  s.get("cnn_threshold", c.cnn_threshold);
  s.get("cnn_padding", c.cnn_padding);
  {
    auto g = s.sub("mask");
    g.get("blur_window", c.mask.blur_window);
    g.get("blur_sigma", c.mask.blur_sigma);
    g.get("block", c.mask.block);
    g.get("offset", c.mask.offset);
    g.finish();
  }
  s.get("mask_margin", c.mask_margin);
  {
    auto g = s.sub("track");
    g.get("iou_min", c.track.iou_min);
    g.get("gap_max", c.track.gap_max);
    g.finish();
  }
  s.get("min_track_frames", c.min_track_frames);
  s.get("min_track_fraction", c.min_track_fraction);
  {
    auto g = s.sub("velocity");
    g.get("median_kernel", c.velocity.median_kernel);
    g.get("gaussian_window", c.velocity.gaussian_window);
    g.get("contrast_cutoff", c.velocity.contrast_cutoff);
    std::string mode = contrast_name(c.velocity.contrast_mode);
    g.get("contrast_mode", mode);
    c.velocity.contrast_mode = contrast_mode(mode);
    g.get("nlm", c.velocity.nlm);
    auto n = g.sub("nlm_params");
    n.get("h", c.velocity.nlm_params.h);
    n.get("patch", c.velocity.nlm_params.patch);
    n.get("search", c.velocity.nlm_params.search);
    n.finish();
    g.finish();
  }
  {
    auto g = s.sub("flow");
    g.get("levels", c.flow.levels);
    g.get("pyramid_scale", c.flow.pyramid_scale);
    g.get("window", c.flow.window);
    g.get("iterations", c.flow.iterations);
    g.get("poly_n", c.flow.poly_n);
    g.get("poly_sigma", c.flow.poly_sigma);
    g.get("min_level_size", c.flow.min_level_size);
    g.finish();
  }
  s.get("flow_margin", c.flow_margin);
  {
    auto g = s.sub("thresholds");
    g.get("t1", c.thresholds.t1);
    g.get("t2", c.thresholds.t2);
    g.get("t3", c.thresholds.t3);
    g.get("t4", c.thresholds.t4);
    g.finish();
  }
  s.get("threads", c.threads);
  s.finish();
}

json pipeline_json(const pipeline::PipelineConfig& c) {
  json j;
  j["fps"] = c.fps;
  j["pixel_pitch_um"] = opt(c.pixel_pitch_um);
  j["median_kernel"] = c.median_kernel;
  j["background_blur_window"] = c.background_blur_window;
  j["gmm"] = {{"max_components", c.gmm.max_components},     {"learning_rate", c.gmm.learning_rate},
              {"variance_threshold", c.gmm.variance_threshold}, {"background_ratio", c.gmm.background_ratio},
              {"variance_init", c.gmm.variance_init},       {"variance_min", c.gmm.variance_min},
              {"variance_max", c.gmm.variance_max},         {"complexity_prior", c.gmm.complexity_prior}};
  j["salience"] = {{"ssim_window", c.salience.ssim_window},
                   {"ssim_threshold", c.salience.ssim_threshold},
                   {"trim_window_halo", c.salience.trim_window_halo},
                   {"area", area_json(c.salience.area)}};
  j["motion"] = {{"noise_floor", c.motion.noise_floor}, {"area", area_json(c.motion.area)}};
  j["merge_iou"] = c.merge_iou;
  j["cnn_threshold"] = c.cnn_threshold;
  j["cnn_padding"] = c.cnn_padding;
  j["mask"] = {{"blur_window", c.mask.blur_window},
               {"blur_sigma", c.mask.blur_sigma},
               {"block", c.mask.block},
               {"offset", c.mask.offset}};
  j["mask_margin"] = c.mask_margin;
  j["track"] = {{"iou_min", c.track.iou_min}, {"gap_max", c.track.gap_max}};
  j["min_track_frames"] = c.min_track_frames;
  j["min_track_fraction"] = c.min_track_fraction;
  j["velocity"] = {{"median_kernel", c.velocity.median_kernel},
                   {"gaussian_window", c.velocity.gaussian_window},
                   {"contrast_cutoff", c.velocity.contrast_cutoff},
                   {"contrast_mode", contrast_name(c.velocity.contrast_mode)},
                   {"nlm", c.velocity.nlm},
                   {"nlm_params",
                    {{"h", c.velocity.nlm_params.h},
                     {"patch", c.velocity.nlm_params.patch},
                     {"search", c.velocity.nlm_params.search}}}};
  j["flow"] = {{"levels", c.flow.levels},         {"pyramid_scale", c.flow.pyramid_scale},
               {"window", c.flow.window},         {"iterations", c.flow.iterations},
               {"poly_n", c.flow.poly_n},         {"poly_sigma", c.flow.poly_sigma},
               {"min_level_size", c.flow.min_level_size}};
  j["flow_margin"] = c.flow_margin;
  j["thresholds"] = {{"t1", c.thresholds.t1}, {"t2", c.thresholds.t2}, {"t3", c.thresholds.t3}, {"t4", opt(c.thresholds.t4)}};
  j["threads"] = c.threads;
  return j;
}

void read_train(Section s, cnn::TrainConfig& t) {
  s.get("epochs", t.epochs);
  s.get("learning_rate", t.learning_rate);
  s.get("beta1", t.beta1);
  s.get("beta2", t.beta2);
  s.get("epsilon", t.epsilon);
  s.get("batch_size", t.batch_size);
  s.get("train_fraction", t.train_fraction);
  s.get("validation_fraction", t.validation_fraction);
  s.get("seed", t.seed);
  s.get("flip_augment", t.flip_augment);
  s.finish();
}

json train_json(const cnn::TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"learning_rate", t.learning_rate},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epsilon", t.epsilon},
          {"batch_size", t.batch_size},
          {"train_fraction", t.train_fraction},
          {"validation_fraction", t.validation_fraction},
          {"seed", t.seed},
          {"flip_augment", t.flip_augment}};
}

void read_distribution(Section s, synth::SceneDistribution& d) {
  s.get("width", d.width);
  s.get("height", d.height);
  s.get("frames", d.frames);
  s.get("min_tubes", d.min_tubes);
  s.get("max_tubes", d.max_tubes);
  s.get("min_width", d.min_width);
  s.get("max_width", d.max_width);
  s.get("min_length", d.min_length);
  s.get("max_length", d.max_length);
  s.get("min_speed", d.min_speed);
  s.get("max_speed", d.max_speed);
  s.get("max_gap_fraction", d.max_gap_fraction);
  s.get("max_hair", d.max_hair);
  s.get("max_stains", d.max_stains);
  s.get("focus_fraction", d.focus_fraction);
  s.get("noise_sigma", d.noise_sigma);
  s.get("max_illumination_ramp", d.max_illumination_ramp);
  s.finish();
}

json distribution_json(const synth::SceneDistribution& d) {
  return {{"width", d.width},
          {"height", d.height},
          {"frames", d.frames},
          {"min_tubes", d.min_tubes},
          {"max_tubes", d.max_tubes},
          {"min_width", d.min_width},
          {"max_width", d.max_width},
          {"min_length", d.min_length},
          {"max_length", d.max_length},
          {"min_speed", d.min_speed},
          {"max_speed", d.max_speed},
          {"max_gap_fraction", d.max_gap_fraction},
          {"max_hair", d.max_hair},
          {"max_stains", d.max_stains},
          {"focus_fraction", d.focus_fraction},
          {"noise_sigma", d.noise_sigma},
          {"max_illumination_ramp", d.max_illumination_ramp}};
}

json rect_json(const Rect& r) { return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }

Rect read_rect(Section s) {
  Rect r;
  s.get("x", r.x);
  s.get("y", r.y);
  s.get("w", r.w);
  s.get("h", r.h);
  s.finish();
  return r;
}

synth::Color read_color(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() || !j[2].is_number()) {
    throw ParameterError(path + ": expected [r, g, b]");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::vector<synth::Vec2> read_path(const json& j, const std::string& path) {
  if (!j.is_array()) throw ParameterError(path + ": expected a list of [x, y]");
  std::vector<synth::Vec2> out;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw ParameterError(path + ": expected [x, y] points");
    }
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

}  // namespace

Config parse_config(const std::string& text) {
  const json j = parse_json(text, "config");
  Config c;
  Section root(j, "config");
  read_pipeline(root.sub("pipeline"), c.pipeline);
  read_train(root.sub("train"), c.train);
  read_distribution(root.sub("synth"), c.distribution);
  root.get("dataset_size", c.dataset_size);
  root.finish();

  metrics::validate(c.pipeline.thresholds);
  flow::validate(c.pipeline.flow);
  if (c.pipeline.threads < 1) throw ParameterError("config.pipeline.threads must be >= 1");
  if (!(c.pipeline.fps > 0.0)) throw ParameterError("config.pipeline.fps must be positive");
  if (c.pipeline.pixel_pitch_um && !(*c.pipeline.pixel_pitch_um > 0.0)) {
    throw ParameterError("config.pipeline.pixel_pitch_um must be positive");
  }
  if (c.dataset_size < 20) throw ParameterError("config.dataset_size must be >= 20");
  return c;
}

Config load_config(const std::filesystem::path& path) { return parse_config(io::read_file(path)); }

std::string dump_config(const Config& cfg) {
  json j;
  j["pipeline"] = pipeline_json(cfg.pipeline);
  j["train"] = train_json(cfg.train);
  j["synth"] = distribution_json(cfg.distribution);
  j["dataset_size"] = cfg.dataset_size;
  return j.dump(2) + "\n";
}

synth::SceneSpec parse_scene(const std::string& text) {
  const json j = parse_json(text, "scene");
  synth::SceneSpec s;
  Section root(j, "scene");
  root.get("width", s.width);
  root.get("height", s.height);
  root.get("fps", s.fps);
  root.get("frames", s.frames);
  root.get("noise_sigma", s.noise_sigma);
  root.get("seed", s.seed);
  root.get("pixel_pitch_um", s.pixel_pitch_um);
  if (root.has("tubes")) {
    const json& tubes = root.raw("tubes");
    if (!tubes.is_array()) throw ParameterError("scene.tubes: expected a list");
    for (std::size_t i = 0; i < tubes.size(); ++i) {
      const std::string p = "scene.tubes[" + std::to_string(i) + "]";
      Section t(tubes[i], p);
      synth::TubeSpec tube;
      if (!tubes[i].contains("path")) throw ParameterError(p + ": missing path");
      tube.path = read_path(t.raw("path"), p + ".path");
      t.get("width", tube.width);
      t.get("speed", tube.speed);
      t.get("speed_pattern", tube.speed_pattern);
      t.get("direction", tube.direction);
      t.get("gap_fraction", tube.gap_fraction);
      t.get("gap_seed", tube.gap_seed);
      t.get("gap_period", tube.gap_period);
      t.finish();
      s.tubes.push_back(std::move(tube));
    }
  }
  {
    auto b = root.sub("background");
    if (j.contains("background") && j["background"].contains("base")) {
      s.background.base = read_color(b.raw("base"), "scene.background.base");
    }
    b.get("texture_amplitude", s.background.texture_amplitude);
    b.get("illumination_ramp", s.background.illumination_ramp);
    b.get("vignette", s.background.vignette);
    b.finish();
  }
  {
    auto a = root.sub("artifacts");
    a.get("hair", s.artifacts.hair);
    a.get("stains", s.artifacts.stains);
    a.finish();
  }
  if (root.has("focus")) {
    const json& focus = root.raw("focus");
    if (!focus.is_array()) throw ParameterError("scene.focus: expected a list");
    for (std::size_t i = 0; i < focus.size(); ++i) {
      const std::string p = "scene.focus[" + std::to_string(i) + "]";
      Section f(focus[i], p);
      synth::FocusRegion r;
      r.rect = read_rect(f.sub("rect"));
      f.get("sigma", r.sigma);
      f.finish();
      s.focus.push_back(r);
    }
  }
  root.finish();
  synth::validate(s);
  return s;
}

synth::SceneSpec load_scene(const std::filesystem::path& path) { return parse_scene(io::read_file(path)); }

std::string dump_scene(const synth::SceneSpec& s) {
  json j;
  j["width"] = s.width;
  j["height"] = s.height;
  j["fps"] = s.fps;
  j["frames"] = s.frames;
  j["noise_sigma"] = s.noise_sigma;
  j["seed"] = s.seed;
  j["pixel_pitch_um"] = opt(s.pixel_pitch_um);
  json tubes = json::array();
  for (const auto& t : s.tubes) {
    json path = json::array();
    for (const auto& p : t.path) path.push_back({p.x, p.y});
    tubes.push_back({{"path", path},
                     {"width", t.width},
                     {"speed", t.speed},
                     {"speed_pattern", t.speed_pattern},
                     {"direction", t.direction},
                     {"gap_fraction", t.gap_fraction},
                     {"gap_seed", t.gap_seed},
                     {"gap_period", t.gap_period}});
  }
  j["tubes"] = tubes;
  j["background"] = {{"base", {s.background.base.r, s.background.base.g, s.background.base.b}},
                     {"texture_amplitude", s.background.texture_amplitude},
                     {"illumination_ramp", s.background.illumination_ramp},
                     {"vignette", s.background.vignette}};
  j["artifacts"] = {{"hair", s.artifacts.hair}, {"stains", s.artifacts.stains}};
  json focus = json::array();
  for (const auto& f : s.focus) focus.push_back({{"rect", rect_json(f.rect)}, {"sigma", f.sigma}});
  j["focus"] = focus;
  return j.dump(2) + "\n";
}

std::string dump_truth(const synth::GroundTruth& t) {
  json j;
  j["schema_version"] = 1;
  j["width"] = t.width;
  j["height"] = t.height;
  j["frames"] = t.frames;
  j["mean_density"] = t.mean_density();
  json tubes = json::array();
  for (std::size_t i = 0; i < t.tubes.size(); ++i) {
    const auto& tube = t.tubes[i];
    tubes.push_back({{"id", static_cast<int>(i)},
                     {"box", rect_json(tube.box)},
                     {"length", tube.length},
                     {"mean_speed", tube.mean_speed},
                     {"direction", tube.direction},
                     {"lumen_px", tube.lumen_px},
                     {"speeds", tube.speeds},
                     {"fill", tube.fill}});
  }
  j["tubes"] = tubes;
  json hair = json::array(), stains = json::array();
  for (const auto& r : t.hair_boxes) hair.push_back(rect_json(r));
  for (const auto& r : t.stain_boxes) stains.push_back(rect_json(r));
  j["hair_boxes"] = hair;
  j["stain_boxes"] = stains;
  return j.dump(2) + "\n";
}

}  // namespace capnet::config
