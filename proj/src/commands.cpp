#include "afh/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "afh/checkpoint.hpp"
#include "afh/evaluate.hpp"
#include "afh/png_io.hpp"

namespace afh {

namespace fs = std::filesystem;
using nlohmann::json;

OutputManifest::OutputManifest(fs::path root, std::string command)
    : root_(std::move(root)), command_(std::move(command)) {}

fs::path OutputManifest::add(const fs::path& path) {
  const fs::path abs = path.is_absolute() ? path : root_ / path;
  const fs::path rel = abs.lexically_relative(root_);
  const fs::path entry = rel.empty() || *rel.begin() == ".." ? abs : rel;
  if (std::find(entries_.begin(), entries_.end(), entry) == entries_.end()) entries_.push_back(entry);
  return abs;
}

void OutputManifest::verify() const {
  for (const fs::path& e : entries_) {
    const fs::path p = e.is_absolute() ? e : root_ / e;
    std::error_code ec;
    if (!fs::is_regular_file(p, ec) || fs::file_size(p, ec) == 0) {
      throw IoError("expected output was not written: " + p.string());
    }
  }
}

void OutputManifest::write() {
  const fs::path path = root_ / "manifest.json";
  json j;
  j["command"] = command_;
  j["outputs"] = json::array();
  for (const fs::path& e : entries_) j["outputs"].push_back(e.generic_string());
  j["outputs"].push_back("manifest.json");
  fs::create_directories(root_);
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + path.string());
  add(path);
}

RunData load_run_data(const RunConfig& cfg) {
  const DataConfig& d = cfg.data;
  RunData data;
  if (d.source == "toy") {
    data.train = make_toy_dataset(d.toy_train_count, d.crop_height, d.crop_width, d.scale, d.toy_train_seed);
    data.test = make_toy_dataset(d.toy_test_count, d.crop_height, d.crop_width, d.scale, d.toy_test_seed);
    return data;
  }
  DatasetSpec train = d.spec(d.train_split);
  DatasetSpec test = d.spec(d.test_split);
  train.image_list = read_split_file(fs::path(d.root_dir) / d.train_split);
  test.image_list = read_split_file(fs::path(d.root_dir) / d.test_split);
  check_disjoint(train.image_list, test.image_list);
  data.train = load_dataset(train);
  data.test = load_dataset(test);
  return data;
}

EpisodeConfig eval_episode(const RunConfig& cfg) {
  EpisodeConfig e = cfg.train.episode;
  e.mode = SelectionMode::greedy;
  e.keep_patches = false;
  return e;
}

namespace {

std::string fmt(double v) { return format_metric(v); }

std::string checkpoint_name(int iteration) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "iter_%06d.afh", iteration);
  return buf;
}

}  // namespace

TrainRunResult run_training(const RunConfig& cfg, const RunData& data, const fs::path& out,
                            OutputManifest& manifest, std::ostream& log,
                            std::optional<TrainState<float>> resume) {
  validate(cfg);
  fs::create_directories(out / "checkpoints");
  save_config(cfg, out / "config.json");
  manifest.add(out / "config.json");

  TrainRunResult result;
  result.state = resume ? std::move(*resume) : TrainState<float>{init_params<float>(cfg.policy, cfg.enhancer, cfg.seed), {}, {}, 0};
  check_param_shapes(result.state.params);
  if (resume) log << "resuming at iteration " << result.state.iteration << "\n";

  const fs::path log_path = out / "train_log.csv";
  const bool append = resume && result.state.iteration > 0 && fs::exists(log_path);
  std::ofstream csv(log_path, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError("cannot write " + log_path.string());
  if (!append) csv << "iteration,enh_loss,mean_return,baseline,val_psnr\n";
  manifest.add(log_path);

  const EpisodeConfig val_episode = eval_episode(cfg);
  TrainCallbacks<float> cb;
  cb.validate = [&](const TrainState<float>& s) { return mean_psnr(s.params, data.test, val_episode); };
  cb.on_iteration = [&](const IterationLog& l) {
    csv << l.iteration << ',' << fmt(l.enh_loss) << ',' << fmt(l.mean_return) << ',' << fmt(l.baseline)
        << ',' << (l.val_psnr ? fmt(*l.val_psnr) : std::string()) << '\n';
    if (l.val_psnr) {
      result.final_val_psnr = l.val_psnr;
      char buf[160];
      std::snprintf(buf, sizeof(buf), "iter %d  enh_loss %.5f  return %.5f  val_psnr %.3f dB\n",
                    l.iteration, l.enh_loss, l.mean_return, *l.val_psnr);
      log << buf << std::flush;
      csv << std::flush;
    }
  };
  cb.on_checkpoint = [&](const TrainState<float>& s) {
    const fs::path p = out / "checkpoints" / checkpoint_name(s.iteration);
    save_checkpoint(p, s);
    manifest.add(p);
  };

  const auto t0 = std::chrono::steady_clock::now();
  train(result.state, data.train, cfg.train, cfg.seed, cb);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  csv.close();
  save_checkpoint(out / "final.afh", result.state);
  manifest.add(out / "final.afh");
  return result;
}

std::vector<std::string> ablation_suites() { return {"tsweep", "random_patch", "no_attention", "i0_input"}; }

namespace {

AblationRow score(const std::string& variant, const RunConfig& cfg, const ParamSet<float>& params,
                  const std::vector<SamplePair>& test) {
  const EpisodeConfig ep = eval_episode(cfg);
  const MetricReport r = evaluate(params, test, ep, cfg.seed);
  double coverage = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, i));
    const Trajectory t = run_episode(params, test[i].lr_up, ep, rng);
    coverage += coverage_mask(t, test[i].hr.height(), test[i].hr.width()).density();
  }
  AblationRow row;
  row.variant = variant;
  row.steps = ep.steps;
  row.patch_height = ep.geom.patch_height;
  row.patch_width = ep.geom.patch_width;
  row.policy = to_string(ep.policy);
  row.context = to_string(ep.context);
  row.iterations = cfg.train.optimizer.iterations;
  row.coverage = coverage / static_cast<double>(test.size());
  row.psnr = r.mean_psnr;
  row.ssim = r.mean_ssim;
  row.fsim = r.mean_fsim;
  return row;
}

AblationRow bicubic_row(const std::vector<SamplePair>& test) {
  const MetricReport r = evaluate_bicubic(test);
  AblationRow row;
  row.variant = "bicubic";
  row.policy = "none";
  row.context = "none";
  row.psnr = r.mean_psnr;
  row.ssim = r.mean_ssim;
  row.fsim = r.mean_fsim;
  return row;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::string& suite, const fs::path& out,
                                      OutputManifest& manifest, std::ostream& log,
                                      const std::optional<TrainState<float>>& learned) {
  const auto suites = ablation_suites();
  if (std::find(suites.begin(), suites.end(), suite) == suites.end()) {
    throw ConfigError("unknown ablation suite '" + suite + "' (expected tsweep, random_patch, no_attention or i0_input)");
  }
  validate(cfg);
  const RunData data = load_run_data(cfg);
  std::vector<AblationRow> rows{bicubic_row(data.test)};

  auto train_variant = [&](const std::string& name, const RunConfig& vcfg) {
    log << "[" << suite << "] training " << name << " (" << vcfg.train.optimizer.iterations << " iterations)\n";
    TrainRunResult r = run_training(vcfg, data, out / name, manifest, log);
    rows.push_back(score(name, vcfg, r.state.params, data.test));
    log << "[" << suite << "] " << name << ": " << fmt(rows.back().psnr) << " dB\n";
  };
  auto reference = [&]() {
    if (learned) {
      rows.push_back(score("attention_fh", cfg, learned->params, data.test));
    } else {
      train_variant("attention_fh", cfg);
    }
  };

  if (suite == "tsweep") {
    for (int steps : cfg.ablation.tsweep_steps) {
      RunConfig v = cfg;
      v.train.episode.steps = steps;
      train_variant("T" + std::to_string(steps), v);
    }
  } else if (suite == "random_patch") {
    reference();
    RunConfig v = cfg;
    v.train.episode.policy = LocationPolicy::uniform_random;
    train_variant("random_patch", v);
  } else if (suite == "no_attention") {
    reference();
    RunConfig v = cfg;
    v.train.episode.steps = cfg.ablation.no_attention_steps;
    v.train.episode.policy = LocationPolicy::fixed_center;
    v.enhancer.patch_height = v.train.episode.geom.patch_height = cfg.data.crop_height;
    v.enhancer.patch_width = v.train.episode.geom.patch_width = cfg.data.crop_width;
    train_variant("no_attention", v);
  } else {
    reference();
    RunConfig v = cfg;
    v.train.episode.context = ContextSource::initial;
    train_variant("i0_input", v);
  }
  const fs::path csv = out / ("ablation_" + suite + ".csv");
  write_ablation_csv(rows, csv);
  manifest.add(csv);
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "variant,steps,patch_height,patch_width,policy,context,iterations,coverage,psnr,ssim,fsim\n";
  for (const AblationRow& r : rows) {
    out << r.variant << ',' << r.steps << ',' << r.patch_height << ',' << r.patch_width << ',' << r.policy
        << ',' << r.context << ',' << r.iterations << ',' << fmt(r.coverage) << ',' << fmt(r.psnr) << ','
        << fmt(r.ssim) << ',' << fmt(r.fsim) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

void blit(Image& canvas, const Image& src, int top, int left) {
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < 3; ++c) canvas.at(top + y, left + x, c) = src.at(y, x, src.channels() == 1 ? 0 : c);
}

void put(Image& canvas, int y, int x) {
  for (int c = 0; c < 3; ++c) canvas.at(y, x, c) = kBoxColor[c];
}

std::string two_digits(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", v);
  return buf;
}

}  // namespace

Image render_trajectory(const fs::path& dir, GridLayout* layout_out) {
  const TrajectoryManifest m = read_trajectory_manifest(dir);
  if (m.rows.empty()) throw IoError(dir.string() + ": trajectory has no steps");
  const Image input = read_png(dir / "input.png");
  GridLayout L;
  L.image_height = input.height();
  L.image_width = input.width();
  L.patch_height = m.geom.patch_height;
  L.patch_width = m.geom.patch_width;
  L.steps = static_cast<int>(m.rows.size());
  Image canvas(L.height(), L.width(), 3, 1.0);

  for (int i = 0; i < L.steps; ++i) {
    const ManifestRow& row = m.rows[i];
    if (row.step != i + 1) throw IoError(dir.string() + ": manifest steps are not 1..T in order");
    const std::string nn = two_digits(row.step);
    const Image state = read_png(dir / ("step_" + nn + ".png"));
    const Image before = read_png(dir / ("patch_" + nn + "_before.png"));
    const Image after = read_png(dir / ("patch_" + nn + "_after.png"));
    if (state.height() != L.image_height || state.width() != L.image_width ||
        before.height() != L.patch_height || before.width() != L.patch_width ||
        after.height() != L.patch_height || after.width() != L.patch_width) {
      throw IoError(dir.string() + ": step " + nn + " images do not match the trajectory geometry");
    }
    check_location(state, row.loc);
    const int x0 = L.column_x(i);
    blit(canvas, state, L.image_row_y(), x0);
    blit(canvas, before, L.before_row_y(), x0);
    blit(canvas, after, L.after_row_y(), x0);

    const PatchWindow w = patch_window(row.loc, m.geom);
    const int top = w.top, left = w.left;
    const int bottom = top + m.geom.patch_height - 1, right = left + m.geom.patch_width - 1;
    const auto inside_y = [&](int y) { return y >= 0 && y < L.image_height; };
    const auto inside_x = [&](int x) { return x >= 0 && x < L.image_width; };
    for (int x = std::max(left, 0); x <= std::min(right, L.image_width - 1); ++x) {
      if (inside_y(top)) put(canvas, L.image_row_y() + top, x0 + x);
      if (inside_y(bottom)) put(canvas, L.image_row_y() + bottom, x0 + x);
    }
    for (int y = std::max(top, 0); y <= std::min(bottom, L.image_height - 1); ++y) {
      if (inside_x(left)) put(canvas, L.image_row_y() + y, x0 + left);
      if (inside_x(right)) put(canvas, L.image_row_y() + y, x0 + right);
    }
  }
  if (layout_out) *layout_out = L;
  return canvas;
}

}  // namespace afh
