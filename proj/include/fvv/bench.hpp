#pragma once

#include "fvv/edge_server.hpp"

#include <string>

namespace fvv {

struct BenchOptions {
  int width = 640;
  int height = 360;
  int ticks = 300;
  std::string scene = "default";
  OutputEncoding output = OutputEncoding::png;
  SynthesisConfig synthesis;
  double arc_position = 0.45; // virtual camera on the rig arc, between cameras 3 and 4
};

struct BenchResult {
  BenchOptions options;
  PipelineStats stats;
  double wall_seconds = 0.0; // pipeline only; capture rendering is excluded

  double fps() const;
};

// Offline pipeline over simulated capture frames. Frames are rendered before
// each tick and not timed.
BenchResult run_bench(const BenchOptions &options);

// Per-stage mean and share of the total, then fps.
std::string format_bench_table(const BenchResult &result);

} // namespace fvv
