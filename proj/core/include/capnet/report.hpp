#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "capnet/classifier.hpp"
#include "capnet/pipeline.hpp"

namespace capnet::report {

inline constexpr int kReportSchemaVersion = 1;

/// Report document. The "timing" member is the only run-dependent part; pass
/// include_timing = false for a byte-reproducible document.
std::string report_json(const pipeline::AnalysisReport& r, bool include_timing = true);

/// frame, area_px, hematocrit, mean_magnitude, angle; empty cells where a value is absent.
std::string capillary_csv(const metrics::CapillaryRecord& rec);

/// Frame t with record boxes drawn in green and masks tinted.
Frame overlay(const Frame& frame, const pipeline::Analysis& analysis, int t);

/// report.json, capillary_<id>.csv, and overlays/frame_NNNNNN.ppm when `overlays` is set.
/// Validates the report against the bundled schema before writing; throws FormatError on failure.
void write_analysis(const pipeline::Analysis& analysis, const FrameSequence& frames,
                    const std::filesystem::path& out_dir, bool overlays = true);

std::string history_csv(const std::vector<cnn::EpochStats>& history);

}  // namespace capnet::report
