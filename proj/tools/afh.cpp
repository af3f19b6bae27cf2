// afh: train, evaluate, hallucinate, ablate, visualize.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "afh/checkpoint.hpp"
#include "afh/commands.hpp"
#include "afh/evaluate.hpp"
#include "afh/png_io.hpp"

namespace fs = std::filesystem;
using namespace afh;

namespace {

struct Common {
  std::string config;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::string output;
  bool time = false;
};

RunConfig effective_config(const Common& c) {
  RunConfig cfg = resolve_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.output.empty()) cfg.output_dir = c.output;
  validate(cfg);
  return cfg;
}

TrainState<float> load_for(const RunConfig& cfg, const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path);
  return load_checkpoint<float>(path, cfg.policy, cfg.enhancer);
}

// A ".png" output names the file itself; anything else is a directory.
std::pair<fs::path, fs::path> file_or_dir(const std::string& output, const std::string& default_name) {
  fs::path p = output.empty() ? fs::path(".") : fs::path(output);
  if (p.extension() == ".png") return {p.has_parent_path() ? p.parent_path() : fs::path("."), p};
  return {p, p / default_name};
}

int finish(OutputManifest& manifest) {
  manifest.write();
  manifest.verify();
  std::cout << "wrote " << manifest.entries().size() << " outputs under " << manifest.root().string() << "\n";
  return 0;
}

int cmd_train(const Common& c) {
  const RunConfig cfg = effective_config(c);
  const fs::path out = cfg.output_dir;
  OutputManifest manifest(out, "train");
  std::optional<TrainState<float>> resume;
  if (!c.checkpoint.empty()) resume = load_for(cfg, c.checkpoint);
  const RunData data = load_run_data(cfg);
  std::cout << "train: " << data.train.size() << " pairs, test: " << data.test.size() << " pairs\n";
  const int start = resume ? resume->iteration : 0;
  const TrainRunResult r = run_training(cfg, data, out, manifest, std::cout, std::move(resume));
  if (c.time && r.state.iteration > start) {
    std::printf("time: %.3f s/iteration over %d iterations\n", r.seconds / (r.state.iteration - start),
                r.state.iteration - start);
  }
  return finish(manifest);
}

int cmd_eval(const Common& c) {
  const RunConfig cfg = effective_config(c);
  const TrainState<float> state = load_for(cfg, c.checkpoint);
  const fs::path out = cfg.output_dir;
  OutputManifest manifest(out, "eval");
  const RunData data = load_run_data(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const MetricReport report = evaluate(state.params, data.test, eval_episode(cfg), cfg.seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_report_csv(report, manifest.add("report.csv"));
  const MetricReport bicubic = evaluate_bicubic(data.test);
  write_report_csv(bicubic, manifest.add("bicubic.csv"));
  std::printf("attention_fh  psnr %.4f  ssim %.4f  fsim %.4f  (%zu images)\n", report.mean_psnr,
              report.mean_ssim, report.mean_fsim, report.per_image.size());
  std::printf("bicubic       psnr %.4f  ssim %.4f  fsim %.4f\n", bicubic.mean_psnr, bicubic.mean_ssim,
              bicubic.mean_fsim);
  if (c.time) std::printf("time: %.2f ms/episode (including metrics)\n", 1e3 * secs / report.per_image.size());
  return finish(manifest);
}

int cmd_hallucinate(const Common& c, const std::string& input, const std::string& dump_dir) {
  const RunConfig cfg = effective_config(c);
  const TrainState<float> state = load_for(cfg, c.checkpoint);
  const auto [root, png] = file_or_dir(c.output, fs::path(input).stem().string() + "_afh.png");
  OutputManifest manifest(root, "hallucinate");
  const Image raw = read_png(input);
  Image lr = raw.channels() == 3 ? raw : to_rgb(raw);
  const Image up = resize_bicubic(lr, cfg.policy.image_height, cfg.policy.image_width);
  EpisodeConfig ep = eval_episode(cfg);
  ep.keep_patches = !dump_dir.empty();
  Rng rng(cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const Trajectory traj = run_episode(state.params, up, ep, rng);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_png(traj.final_image, manifest.add(png));
  if (!dump_dir.empty()) {
    const fs::path d = fs::path(dump_dir).is_absolute() ? fs::path(dump_dir) : root / dump_dir;
    export_trajectory(traj, d);
    for (const auto& e : fs::directory_iterator(d)) manifest.add(e.path());
  }
  std::cout << "steps:";
  for (const StepRecord& r : traj.records) std::cout << " (" << r.loc.x << "," << r.loc.y << ")";
  std::cout << "\n";
  if (c.time) std::printf("time: %.2f ms/episode\n", 1e3 * secs);
  return finish(manifest);
}

int cmd_ablate(const Common& c, const std::string& suite) {
  const RunConfig cfg = effective_config(c);
  std::optional<TrainState<float>> learned;
  if (!c.checkpoint.empty()) learned = load_for(cfg, c.checkpoint);
  const fs::path out = cfg.output_dir;
  OutputManifest manifest(out, "ablate " + suite);
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_ablation(cfg, suite, out, manifest, std::cout, learned);
  for (const AblationRow& r : rows) {
    std::printf("%-14s T=%-3d patch %dx%d  coverage %.3f  psnr %.4f  ssim %.4f  fsim %.4f\n", r.variant.c_str(),
                r.steps, r.patch_height, r.patch_width, r.coverage, r.psnr, r.ssim, r.fsim);
  }
  if (c.time) {
    std::printf("time: %.1f s total\n",
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return finish(manifest);
}

int cmd_visualize(const Common& c, const std::string& trajectory) {
  const auto [root, png] = file_or_dir(c.output, "trajectory_grid.png");
  OutputManifest manifest(root, "visualize");
  GridLayout layout;
  const Image grid = render_trajectory(trajectory, &layout);
  write_png(grid, manifest.add(png));
  std::printf("%d steps, grid %dx%d\n", layout.steps, grid.height(), grid.width());
  return finish(manifest);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-FH face hallucination"};
  app.require_subcommand(1);
  Common common;
  std::string input, dump_dir, suite, trajectory;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", common.config, "preset name (paper, toy) or JSON config path");
    if (config_required) opt->required();
    sub->add_option("--checkpoint", common.checkpoint, "checkpoint file");
    sub->add_option("--seed", common.seed, "overrides the config seed");
    sub->add_option("--output", common.output, "output directory");
    sub->add_flag("--time", common.time, "report timings");
  };

  auto* train = app.add_subcommand("train", "train from a config (resume with --checkpoint)");
  add_common(train, true);
  auto* eval = app.add_subcommand("eval", "greedy evaluation on the test split");
  add_common(eval, true);
  auto* hall = app.add_subcommand("hallucinate", "super-resolve one image");
  add_common(hall, true);
  hall->add_option("--input", input, "input PNG (low resolution)")->required();
  hall->add_option("--dump-trajectory", dump_dir, "directory for the episode's step images and manifest");
  auto* ablate = app.add_subcommand("ablate", "run an ablation suite");
  add_common(ablate, true);
  ablate->add_option("--suite", suite, "tsweep, random_patch, no_attention or i0_input")->required();
  auto* vis = app.add_subcommand("visualize", "render a dumped trajectory");
  add_common(vis, false);
  vis->add_option("--trajectory", trajectory, "trajectory directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common);
    if (*hall) return cmd_hallucinate(common, input, dump_dir);
    if (*ablate) return cmd_ablate(common, suite);
    if (*vis) return cmd_visualize(common, trajectory);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
