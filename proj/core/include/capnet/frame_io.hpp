#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "capnet/image.hpp"

namespace capnet::io {

/// Binary PPM (P6) / PGM (P5), maxval up to 65535. PNG when built with libpng.
Frame read_image(const std::filesystem::path& path);
/// Format picked from the extension: .ppm/.pgm, .png. Values quantized to 8 bits.
void write_image(const Frame& frame, const std::filesystem::path& path);

bool png_supported();

/// frame_000000.ppm, frame_000001.ppm, ...
std::string frame_name(int index, const std::string& extension = "ppm");
/// Every frame_NNNNNN.{ppm,pgm,png} in `dir`, ordered by index. Throws ParameterError when none.
FrameSequence read_frame_dir(const std::filesystem::path& dir);
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);
void write_frame_dir(const FrameSequence& frames, const std::filesystem::path& dir, const std::string& extension = "ppm");

/// Write through a temporary sibling, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace capnet::io
