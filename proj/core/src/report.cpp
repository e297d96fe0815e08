#include "capnet/report.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "capnet/error.hpp"
#include "capnet/frame_io.hpp"
#include "capnet/schema.hpp"

namespace capnet::report {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

json stage_json(const pipeline::StageTiming& t) {
  return {{"preprocess", t.preprocess}, {"roi", t.roi},   {"cnn", t.cnn},         {"mask", t.mask},
          {"track", t.track},           {"flow", t.flow}, {"metrics", t.metrics}};
}

double fps_of(double seconds) { return seconds > 0.0 ? 1.0 / seconds : 0.0; }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string report_json(const pipeline::AnalysisReport& r, bool include_timing) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["video_id"] = r.video_id;
  j["frame_count"] = r.frame_count;
  j["width"] = r.width;
  j["height"] = r.height;
  j["fps"] = r.fps;
  j["pixel_pitch_um"] = opt(r.pixel_pitch_um);
  j["total_capillary_density"] = r.total_capillary_density;
  j["functional_capillary_density"] = r.functional_capillary_density;
  json caps = json::array();
  for (const auto& c : r.capillaries) {
    json v;
    v["id"] = c.id;
    v["box"] = {{"x", c.box.x}, {"y", c.box.y}, {"w", c.box.w}, {"h", c.box.h}};
    v["first_frame"] = c.first_frame;
    v["last_frame"] = c.last_frame;
    v["detected_frames"] = c.detected_frames;
    v["velocity_class"] = c.velocity_class;
    v["velocity"] = c.velocity;
    v["velocity_um_per_s"] = r.pixel_pitch_um ? json(c.velocity * *r.pixel_pitch_um * r.fps) : json(nullptr);
    v["heterogeneity"] = {{"std", c.heterogeneity_std}, {"cv", opt(c.heterogeneity_cv)}};
    v["mean_hematocrit"] = c.mean_hematocrit;
    v["direction"] = opt(c.direction);
    v["mean_area_px"] = c.mean_area_px;
    caps.push_back(std::move(v));
  }
  j["capillaries"] = caps;
  if (include_timing) {
    const auto& t = r.seconds_per_frame;
    json fps = {{"detection", fps_of(t.preprocess + t.roi + t.cnn)},
                {"preprocess", fps_of(t.preprocess)},
                {"roi", fps_of(t.roi)},
                {"cnn", fps_of(t.cnn)},
                {"flow", fps_of(t.flow)}};
    j["timing"] = {{"seconds_per_frame", stage_json(t)}, {"frames_per_second", fps}};
  }
  return j.dump(2) + "\n";
}

std::string capillary_csv(const metrics::CapillaryRecord& rec) {
  std::ostringstream out;
  out << "frame,area_px,hematocrit,mean_magnitude,angle\n";
  for (int t = 0; t < rec.frames(); ++t) {
    const auto i = static_cast<std::size_t>(t);
    out << t << ',';
    if (i < rec.area_px.size()) out << rec.area_px[i];
    out << ',';
    if (i < rec.hematocrit.size()) out << num(rec.hematocrit[i]);
    out << ',';
    if (i < rec.mean_magnitude.size() && rec.mean_magnitude[i]) out << num(*rec.mean_magnitude[i]);
    out << ',';
    if (i < rec.angle.size() && rec.angle[i]) out << num(*rec.angle[i]);
    out << '\n';
  }
  return out.str();
}

Frame overlay(const Frame& frame, const pipeline::Analysis& analysis, int t) {
  Frame out = frame.is_rgb() ? frame : Frame({frame.plane(0), frame.plane(0), frame.plane(0)});
  const int w = out.width();
  const int h = out.height();
  for (const auto& rec : analysis.records) {
    if (t < 0 || t >= rec.frames()) continue;
    const auto i = static_cast<std::size_t>(t);
    if (i < rec.masks.size()) {
      const BinaryMask& m = rec.masks[i];
      for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
          if (!m(x, y)) continue;
          const int fx = rec.region.x + x, fy = rec.region.y + y;
          out.at(0, fx, fy) = 0.6f * out.at(0, fx, fy) + 0.4f;
          out.at(1, fx, fy) = 0.6f * out.at(1, fx, fy) + 0.4f;
          out.at(2, fx, fy) = 0.6f * out.at(2, fx, fy);
        }
    }
    if (!rec.boxes[i]) continue;
    const Rect b = clip(*rec.boxes[i], w, h);
    auto put = [&](int x, int y) {
      out.at(0, x, y) = 0.0f;
      out.at(1, x, y) = 1.0f;
      out.at(2, x, y) = 0.0f;
    };
    for (int x = b.x; x < b.right(); ++x) {
      put(x, b.y);
      put(x, b.bottom() - 1);
    }
    for (int y = b.y; y < b.bottom(); ++y) {
      put(b.x, y);
      put(b.right() - 1, y);
    }
  }
  return out;
}

void write_analysis(const pipeline::Analysis& analysis, const FrameSequence& frames, const fs::path& out_dir,
                    bool overlays) {
  const std::string doc = report_json(analysis.report);
  const auto errors = schema::validate(doc, schema::load_schema("report.schema.json"));
  if (!errors.empty()) throw FormatError("report fails its schema: " + errors.front());

  fs::create_directories(out_dir);
  io::write_file_atomic(out_dir / "report.json", doc);
  for (const auto& rec : analysis.records) {
    io::write_file_atomic(out_dir / ("capillary_" + std::to_string(rec.id) + ".csv"), capillary_csv(rec));
  }
  if (overlays) {
    fs::create_directories(out_dir / "overlays");
    for (std::size_t t = 0; t < frames.size(); ++t) {
      io::write_image(overlay(frames[t], analysis, static_cast<int>(t)),
                      out_dir / "overlays" / io::frame_name(static_cast<int>(t)));
    }
  }
}

std::string history_csv(const std::vector<cnn::EpochStats>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto& e : history) {
    out << e.epoch << ',' << num(e.train_loss) << ',' << num(e.train_accuracy) << ',' << num(e.val_loss) << ','
        << num(e.val_accuracy) << '\n';
  }
  return out.str();
}

}  // namespace capnet::report
