#pragma once

#include <filesystem>
#include <string>

#include "capnet/classifier.hpp"
#include "capnet/pipeline.hpp"
#include "capnet/synth.hpp"

namespace capnet::config {

/// Everything tunable, one JSON document with typed sections. Absent keys keep their
/// defaults; unknown keys are rejected.
struct Config {
  pipeline::PipelineConfig pipeline;
  cnn::TrainConfig train;
  synth::SceneDistribution distribution;
  int dataset_size = 2000;
};

Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);
/// Full document including defaults; parse_config(dump_config(c)) == c.
std::string dump_config(const Config& cfg);

synth::SceneSpec parse_scene(const std::string& text);
synth::SceneSpec load_scene(const std::filesystem::path& path);
std::string dump_scene(const synth::SceneSpec& spec);

/// Ground truth without the pixel layers (those are written as images).
std::string dump_truth(const synth::GroundTruth& truth);

}  // namespace capnet::config
