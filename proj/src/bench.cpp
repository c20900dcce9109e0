#include "fvv/bench.hpp"

#include <chrono>
#include <cstdio>

namespace fvv {

double BenchResult::fps() const {
  const double us = stats.mean().total_us();
  return us > 0 ? 1e6 / us : 0.0;
}

BenchResult run_bench(const BenchOptions &options) {
  if (options.ticks <= 0) {
    throw ServerError("bench needs at least one tick");
  }
  const auto bg = simulated_background(options.width, options.height);
  const Scene scene = make_scene(options.scene);
  ServerConfig cfg;
  cfg.output = options.output;
  cfg.synthesis = options.synthesis;
  EdgePipeline pipeline(bg, cfg, [] { return Timestamp{0}; });
  pipeline.set_viewpoint(arc_viewpoint(bg.calibration.cameras, options.arc_position, kStageTarget));
  pipeline.tick(std::nullopt);

  std::map<CameraId, CameraRenderer> renderers;
  for (auto id : pipeline.subscriptions()) {
    renderers.emplace(id, CameraRenderer(scene, bg.calibration.at(id), bg.calibration.quantizer));
  }
  BenchResult r;
  r.options = options;
  double busy = 0.0;
  for (int k = 0; k < options.ticks; ++k) {
    const Timestamp ts = static_cast<Timestamp>(k) * cfg.assembler.period_us;
    for (const auto &[id, renderer] : renderers) {
      pipeline.ingest(std::make_shared<const TimedFrame>(make_timed_frame(id, ts, renderer.render(ts))));
    }
    const auto t0 = std::chrono::steady_clock::now();
    if (!pipeline.tick(std::nullopt)) {
      throw ServerError("bench tick " + std::to_string(k) + " produced no frame");
    }
    busy += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  r.stats = pipeline.stats();
  r.wall_seconds = busy;
  return r;
}

std::string format_bench_table(const BenchResult &r) {
  const auto m = r.stats.mean();
  const double total = m.total_us();
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "fvv bench %dx%d, %llu ticks, output %s\n", r.options.width, r.options.height,
                static_cast<unsigned long long>(r.stats.frames_synthesized),
                r.options.output == OutputEncoding::png ? "png" : "raw");
  out += line;
  out += "stage        mean_ms   share\n";
  const std::pair<const char *, double> rows[] = {{"assembly", m.assembly_us}, {"warp", m.warp_us},
                                                  {"blend", m.blend_us},       {"composite", m.composite_us},
                                                  {"encode", m.encode_us}};
  for (const auto &[name, us] : rows) {
    std::snprintf(line, sizeof line, "%-12s %8.2f  %5.1f%%\n", name, us / 1000.0, total > 0 ? 100.0 * us / total : 0.0);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-12s %8.2f  100.0%%\n", "total", total / 1000.0);
  out += line;
  std::snprintf(line, sizeof line, "fps %.1f\n", r.fps());
  out += line;
  return out;
}

} // namespace fvv
