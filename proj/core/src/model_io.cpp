#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "capnet/classifier.hpp"
#include "capnet/error.hpp"

namespace capnet::cnn {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'P', 'N'};

void put_u8(std::vector<std::uint8_t>& out, unsigned v) { out.push_back(static_cast<std::uint8_t>(v)); }

void put_u16(std::vector<std::uint8_t>& out, unsigned v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xffu));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xffu));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((u >> s) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  float f32() {
    need(4);
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return std::bit_cast<float>(u);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("model: truncated file");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> save_model(const CnnModel& model) {
  const auto descs = layer_descs(model.arch);
  if (descs.size() > 255 || model.params.weights.size() != descs.size()) {
    throw ParameterError("save_model: model does not match its architecture");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u16(out, kModelFormatVersion);
  put_u8(out, static_cast<unsigned>(descs.size()));
  for (const auto& d : descs) {
    if (d.in > 0xffff || d.out > 0xffff || d.kernel > 0xff) throw ParameterError("save_model: layer too large");
    put_u8(out, static_cast<unsigned>(d.kind));
    put_u16(out, static_cast<unsigned>(d.in));
    put_u16(out, static_cast<unsigned>(d.out));
    put_u8(out, static_cast<unsigned>(d.kernel));
  }
  for (std::size_t l = 0; l < descs.size(); ++l) {
    const auto& d = descs[l];
    const std::size_t nw = static_cast<std::size_t>(d.out) * d.in * d.kernel * d.kernel;
    if (model.params.weights[l].size() != nw || model.params.biases[l].size() != static_cast<std::size_t>(d.out)) {
      throw ParameterError("save_model: parameter tensor has the wrong size");
    }
    for (float w : model.params.weights[l]) put_f32(out, w);
    for (float b : model.params.biases[l]) put_f32(out, b);
  }
  return out;
}

CnnModel load_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("model: bad magic");
  Reader r(bytes.subspan(4));
  const auto version = r.u16();
  if (version != kModelFormatVersion) throw FormatError("model: unsupported format version");
  const int count = r.u8();
  std::vector<LayerDesc> descs;
  for (int i = 0; i < count; ++i) {
    LayerDesc d{};
    const auto kind = r.u8();
    if (kind != static_cast<std::uint8_t>(LayerKind::Conv) && kind != static_cast<std::uint8_t>(LayerKind::Dense)) {
      throw FormatError("model: unknown layer kind");
    }
    d.kind = static_cast<LayerKind>(kind);
    d.in = r.u16();
    d.out = r.u16();
    d.kernel = r.u8();
    descs.push_back(d);
  }
  CnnModel m = zero_model(architecture_from_descs(descs));
  if (r.remaining() != m.parameter_count() * 4) {
    throw FormatError(r.remaining() < m.parameter_count() * 4 ? "model: truncated file" : "model: trailing bytes");
  }
  for (std::size_t l = 0; l < descs.size(); ++l) {
    for (float& w : m.params.weights[l]) w = r.f32();
    for (float& b : m.params.biases[l]) b = r.f32();
  }
  return m;
}

void save_model_file(const CnnModel& model, const std::string& path) {
  const auto bytes = save_model(model);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_model_file: cannot open " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("save_model_file: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CnnModel load_model_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_model_file: cannot open " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return load_model(bytes);
}

}  // namespace capnet::cnn
