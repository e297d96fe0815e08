#include "capnet/frame_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include "capnet/error.hpp"

#ifdef CAPNET_HAVE_PNG
#include <png.h>
#endif

namespace capnet::io {

namespace fs = std::filesystem;

namespace {

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

// Header token reader that skips whitespace and '#' comments.
struct PnmHeader {
  const std::string& s;
  std::size_t pos = 0;

  long next_int(const std::string& path) {
    for (;;) {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
      if (pos < s.size() && s[pos] == '#') {
        while (pos < s.size() && s[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (start == pos) throw FormatError(path + ": malformed PNM header");
    return std::stol(s.substr(start, pos - start));
  }
};

Frame read_pnm(const std::string& bytes, const std::string& path) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
    throw FormatError(path + ": not a binary PPM/PGM file");
  }
  const int channels = bytes[1] == '6' ? 3 : 1;
  PnmHeader hdr{bytes, 2};
  const long w = hdr.next_int(path);
  const long h = hdr.next_int(path);
  const long maxval = hdr.next_int(path);
  if (w <= 0 || h <= 0 || w > 1 << 15 || h > 1 << 15) throw FormatError(path + ": bad dimensions");
  if (maxval <= 0 || maxval > 65535) throw FormatError(path + ": bad maxval");
  if (hdr.pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[hdr.pos]))) {
    throw FormatError(path + ": malformed PNM header");
  }
  ++hdr.pos;
  const int bps = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * channels * bps;
  if (bytes.size() - hdr.pos < need) throw FormatError(path + ": truncated pixel data");

  Frame f(static_cast<int>(w), static_cast<int>(h), channels);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + hdr.pos);
  const auto maxf = static_cast<float>(maxval);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        unsigned v = *p++;
        if (bps == 2) v = (v << 8) | *p++;
        f.at(c, x, y) = std::min(1.0f, static_cast<float>(v) / maxf);
      }
    }
  }
  return f;
}

std::string encode_pnm(const Frame& frame) {
  const int channels = frame.channels();
  std::ostringstream out;
  out << (channels == 3 ? "P6" : "P5") << '\n' << frame.width() << ' ' << frame.height() << "\n255\n";
  std::string body(static_cast<std::size_t>(frame.width()) * frame.height() * channels, '\0');
  std::size_t k = 0;
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x)
      for (int c = 0; c < channels; ++c) body[k++] = static_cast<char>(quantize(frame.at(c, x, y)));
  return out.str() + body;
}

#ifdef CAPNET_HAVE_PNG
Frame read_png(const std::string& bytes, const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw FormatError(path + ": " + img.message);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw FormatError(path + ": " + img.message);
  }
  const int channels = gray ? 1 : 3;
  Frame f(static_cast<int>(img.width), static_cast<int>(img.height), channels);
  std::size_t k = 0;
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x)
      for (int c = 0; c < channels; ++c) f.at(c, x, y) = static_cast<float>(buf[k++]) / 255.0f;
  return f;
}

std::string encode_png(const Frame& frame) {
  const int channels = frame.channels();
  std::vector<unsigned char> buf(static_cast<std::size_t>(frame.width()) * frame.height() * channels);
  std::size_t k = 0;
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x)
      for (int c = 0; c < channels; ++c) buf[k++] = quantize(frame.at(c, x, y));
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(frame.width());
  img.height = static_cast<png_uint_32>(frame.height());
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, buf.data(), 0, nullptr)) {
    throw FormatError(std::string("png encode: ") + img.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, buf.data(), 0, nullptr)) {
    throw FormatError(std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}
#endif

}  // namespace

bool png_supported() {
#ifdef CAPNET_HAVE_PNG
  return true;
#else
  return false;
#endif
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParameterError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParameterError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParameterError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw ParameterError("cannot rename onto " + path.string() + ": " + ec.message());
  }
}

Frame read_image(const fs::path& path) {
  const std::string bytes = read_file(path);
  const std::string ext = lower_ext(path);
  if (ext == ".png") {
#ifdef CAPNET_HAVE_PNG
    return read_png(bytes, path.string());
#else
    throw FormatError(path.string() + ": PNG support not built in");
#endif
  }
  return read_pnm(bytes, path.string());
}

void write_image(const Frame& frame, const fs::path& path) {
  require_valid_frame(frame, "write_image", false);
  const std::string ext = lower_ext(path);
  if (ext == ".png") {
#ifdef CAPNET_HAVE_PNG
    write_file_atomic(path, encode_png(frame));
    return;
#else
    throw FormatError(path.string() + ": PNG support not built in");
#endif
  }
  if (ext == ".pgm" && !frame.is_gray()) throw ParameterError(path.string() + ": PGM needs a gray frame");
  write_file_atomic(path, encode_pnm(frame));
}

std::string frame_name(int index, const std::string& extension) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.", index);
  return buf + extension;
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ParameterError("not a directory: " + dir.string());
  static const std::regex pattern(R"(frame_(\d{6})\.(ppm|pgm|png))", std::regex::icase);
  std::vector<std::pair<int, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoi(m[1].str()), entry.path());
  }
  std::sort(found.begin(), found.end());
  for (std::size_t i = 1; i < found.size(); ++i) {
    if (found[i].first == found[i - 1].first) throw ParameterError("duplicate frame index in " + dir.string());
  }
  std::vector<fs::path> out;
  for (auto& [i, p] : found) out.push_back(std::move(p));
  return out;
}

FrameSequence read_frame_dir(const fs::path& dir) {
  const auto paths = list_frames(dir);
  if (paths.empty()) throw ParameterError("no frame_NNNNNN images in " + dir.string());
  FrameSequence frames;
  frames.reserve(paths.size());
  for (const auto& p : paths) {
    frames.push_back(read_image(p));
    if (frames.back().width() != frames.front().width() || frames.back().height() != frames.front().height()) {
      throw ParameterError(p.string() + ": frame size differs from the first frame");
    }
  }
  return frames;
}

void write_frame_dir(const FrameSequence& frames, const fs::path& dir, const std::string& extension) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) write_image(frames[i], dir / frame_name(static_cast<int>(i), extension));
}

}  // namespace capnet::io
