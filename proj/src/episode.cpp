#include "afh/episode.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "afh/png_io.hpp"

namespace afh {

void validate_probmap(const ProbMap& pm) {
  if (pm.height < 1 || pm.width < 1 ||
      pm.p.size() != static_cast<std::size_t>(pm.height) * pm.width) {
    throw ShapeError("probability map size does not match its grid");
  }
  for (double v : pm.p) {
    if (!std::isfinite(v) || v < 0.0) {
      throw Error("degenerate probability map (non-finite or negative entry)");
    }
  }
}

std::pair<PatchLocation, double> sample_location(const ProbMap& pm, Rng& rng) {
  validate_probmap(pm);
  double total = 0.0;
  for (double v : pm.p) total += v;
  if (!(total > 0.0)) throw Error("degenerate probability map (zero mass)");
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  int chosen = -1;
  for (std::size_t i = 0; i < pm.p.size(); ++i) {
    if (pm.p[i] <= 0.0) continue;
    chosen = static_cast<int>(i);
    acc += pm.p[i];
    if (u < acc) break;
  }
  return {pm.location_of(chosen), std::log(pm.p[chosen])};
}

PatchLocation argmax_location(const ProbMap& pm) {
  validate_probmap(pm);
  std::size_t best = 0;
  for (std::size_t i = 1; i < pm.p.size(); ++i) {
    if (pm.p[i] > pm.p[best]) best = i;
  }
  return pm.location_of(static_cast<int>(best));
}

std::vector<unsigned char> allowed_locations(const std::vector<PatchLocation>& visited, int height,
                                             int width, const PatchGeometry& geom) {
  std::vector<unsigned char> allowed(static_cast<std::size_t>(height) * width, 1);
  bool any = false;
  for (PatchLocation v : visited) {
    const PatchWindow w = patch_window(v, geom);
    for (int y = std::max(0, w.top); y < std::min(height, w.top + w.height); ++y)
      for (int x = std::max(0, w.left); x < std::min(width, w.left + w.width); ++x)
        allowed[static_cast<std::size_t>(y) * width + x] = 0;
  }
  for (unsigned char a : allowed) any = any || a;
  if (!any) std::fill(allowed.begin(), allowed.end(), 1);
  return allowed;
}

ProbMap restrict_probmap(const ProbMap& pm, const std::vector<unsigned char>& allowed) {
  if (allowed.size() != pm.p.size()) throw ShapeError("mask does not match the probability map");
  ProbMap out = pm;
  double total = 0.0;
  for (std::size_t i = 0; i < out.p.size(); ++i) {
    if (!allowed[i]) out.p[i] = 0.0;
    total += out.p[i];
  }
  if (!(total > 0.0)) throw Error("degenerate probability map (no mass on allowed locations)");
  for (double& v : out.p) v /= total;
  return out;
}

template <typename T>
Trajectory run_episode(const ParamSet<T>& params, const Image& input, const EpisodeConfig& cfg,
                       Rng& rng) {
  if (cfg.steps < 0) throw ConfigError("episode steps must be non-negative");
  const EnhancerConfig& ecfg = params.enhancer_config;
  if (cfg.geom.patch_height != ecfg.patch_height || cfg.geom.patch_width != ecfg.patch_width) {
    throw GeometryError("episode patch geometry differs from the enhancer's patch size");
  }
  if (input.height() != ecfg.image_height || input.width() != ecfg.image_width ||
      input.channels() != ecfg.image_channels) {
    throw ShapeError("episode input does not match the model's image size");
  }
  check_geometry(input, cfg.geom);

  Trajectory traj;
  traj.initial_image = input;
  traj.geom = cfg.geom;
  traj.context = cfg.context;
  traj.mask_visited = cfg.mask_visited;
  traj.records.reserve(cfg.steps);
  std::vector<PatchLocation> visited;

  Image current = input;
  RecurrentMemory mem = RecurrentMemory::zeros(params.policy_config.lstm_hidden);
  std::optional<PatchLocation> prev;
  for (int t = 1; t <= cfg.steps; ++t) {
    const Image& context = cfg.context == ContextSource::current ? current : input;
    StepRecord rec;
    rec.step = t;
    switch (cfg.policy) {
      case LocationPolicy::learned: {
        auto [pm, next] = policy_forward(params, context, mem, prev);
        mem = std::move(next);
        if (cfg.mask_visited) pm = restrict_probmap(pm, allowed_locations(visited, input.height(), input.width(), cfg.geom));
        if (cfg.mode == SelectionMode::sample) {
          auto [loc, lp] = sample_location(pm, rng);
          rec.loc = loc;
          rec.log_prob = lp;
        } else {
          rec.loc = argmax_location(pm);
        }
        break;
      }
      case LocationPolicy::uniform_random:
        if (cfg.mask_visited) {
          const auto allowed = allowed_locations(visited, input.height(), input.width(), cfg.geom);
          std::vector<int> open;
          for (std::size_t i = 0; i < allowed.size(); ++i)
            if (allowed[i]) open.push_back(static_cast<int>(i));
          const int pick = open[uniform_index(rng, open.size())];
          rec.loc = {pick % input.width() + 1, pick / input.width() + 1};
        } else {
          rec.loc = {static_cast<int>(uniform_index(rng, input.width())) + 1,
                     static_cast<int>(uniform_index(rng, input.height())) + 1};
        }
        break;
      case LocationPolicy::fixed_center:
        rec.loc = {input.width() / 2 + 1, input.height() / 2 + 1};
        break;
    }
    Image before = crop_patch(current, rec.loc, cfg.geom);
    Image after = enhance_forward(params, before, context);
    current = replace_patch(current, rec.loc, after, cfg.geom);
    if (cfg.keep_patches) {
      rec.patch_before = std::move(before);
      rec.patch_after = std::move(after);
    }
    prev = rec.loc;
    visited.push_back(rec.loc);
    traj.records.push_back(std::move(rec));
  }
  traj.final_image = std::move(current);
  return traj;
}

template Trajectory run_episode<float>(const ParamSet<float>&, const Image&,
                                       const EpisodeConfig&, Rng&);
template Trajectory run_episode<double>(const ParamSet<double>&, const Image&,
                                        const EpisodeConfig&, Rng&);

std::vector<Image> replay_states(const Trajectory& traj) {
  std::vector<Image> states;
  states.reserve(traj.records.size());
  Image current = traj.initial_image;
  for (const StepRecord& rec : traj.records) {
    if (rec.patch_after.empty()) {
      throw Error("trajectory was recorded without patches; cannot replay");
    }
    states.push_back(current);
    current = replace_patch(current, rec.loc, rec.patch_after, traj.geom);
  }
  return states;
}

std::size_t CoverageMask::covered() const {
  std::size_t n = 0;
  for (unsigned char b : bits) n += b != 0;
  return n;
}

CoverageMask coverage_mask(const Trajectory& traj, int height, int width) {
  CoverageMask mask{height, width,
                    std::vector<unsigned char>(static_cast<std::size_t>(height) * width, 0)};
  for (const StepRecord& rec : traj.records) {
    const PatchWindow win = patch_window(rec.loc, traj.geom);
    for (int i = 0; i < win.height; ++i) {
      const int y = win.top + i;
      if (y < 0 || y >= height) continue;
      for (int j = 0; j < win.width; ++j) {
        const int x = win.left + j;
        if (x < 0 || x >= width) continue;
        mask.bits[static_cast<std::size_t>(y) * width + x] = 1;
      }
    }
  }
  return mask;
}

namespace {

std::string step_name(const char* prefix, int step, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%02d%s", prefix, step, suffix);
  return buf;
}

}  // namespace

void export_trajectory(const Trajectory& traj, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_png(traj.initial_image, dir / "input.png");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
  manifest << "step,x,y,log_prob\n";
  Image current = traj.initial_image;
  for (const StepRecord& rec : traj.records) {
    manifest << rec.step << ',' << rec.loc.x << ',' << rec.loc.y << ',';
    if (rec.log_prob) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", *rec.log_prob);
      manifest << buf;
    }
    manifest << '\n';
    if (!rec.patch_after.empty()) {
      current = replace_patch(current, rec.loc, rec.patch_after, traj.geom);
      write_png(rec.patch_before, dir / step_name("patch_", rec.step, "_before.png"));
      write_png(rec.patch_after, dir / step_name("patch_", rec.step, "_after.png"));
      write_png(current, dir / step_name("step_", rec.step, ".png"));
    }
  }
  if (!traj.records.empty() && traj.records.back().patch_after.empty()) {
    write_png(traj.final_image, dir / "final.png");
  }
  std::ofstream geometry(dir / "geometry.csv");
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", traj.geom.pad_value);
  geometry << "patch_height,patch_width,pad_value\n"
           << traj.geom.patch_height << ',' << traj.geom.patch_width << ',' << buf << '\n';
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int parse_int(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw IoError("malformed integer '" + s + "' in " + where);
  return v;
}

double parse_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw IoError("malformed number '" + s + "' in " + where);
  return v;
}

}  // namespace

TrajectoryManifest read_trajectory_manifest(const std::filesystem::path& dir) {
  TrajectoryManifest out;
  const auto manifest_path = dir / "manifest.csv";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing " + manifest_path.string());
  std::string line;
  if (!std::getline(in, line) || line != "step,x,y,log_prob") {
    throw IoError(manifest_path.string() + ": bad header");
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
    const auto cells = split_csv(line);
    if (cells.size() != 4) throw IoError(where + ": expected 4 fields");
    ManifestRow row;
    row.step = parse_int(cells[0], where);
    row.loc = {parse_int(cells[1], where), parse_int(cells[2], where)};
    if (!cells[3].empty()) row.log_prob = parse_double(cells[3], where);
    out.rows.push_back(row);
  }
  const auto geom_path = dir / "geometry.csv";
  std::ifstream gin(geom_path);
  if (!gin) throw IoError("missing " + geom_path.string());
  if (!std::getline(gin, line) || line != "patch_height,patch_width,pad_value" ||
      !std::getline(gin, line)) {
    throw IoError(geom_path.string() + ": bad header");
  }
  const auto cells = split_csv(line);
  if (cells.size() != 3) throw IoError(geom_path.string() + ": expected 3 fields");
  out.geom = {parse_int(cells[0], geom_path.string()), parse_int(cells[1], geom_path.string()),
              parse_double(cells[2], geom_path.string())};
  return out;
}

std::string to_string(SelectionMode m) { return m == SelectionMode::sample ? "sample" : "greedy"; }

std::string to_string(LocationPolicy p) {
  switch (p) {
    case LocationPolicy::learned: return "learned";
    case LocationPolicy::uniform_random: return "uniform_random";
    case LocationPolicy::fixed_center: return "fixed_center";
  }
  return "learned";
}

std::string to_string(ContextSource c) {
  return c == ContextSource::current ? "current" : "initial";
}

SelectionMode parse_selection_mode(const std::string& s) {
  if (s == "sample") return SelectionMode::sample;
  if (s == "greedy") return SelectionMode::greedy;
  throw ConfigError("unknown selection mode '" + s + "'");
}

LocationPolicy parse_location_policy(const std::string& s) {
  if (s == "learned") return LocationPolicy::learned;
  if (s == "uniform_random") return LocationPolicy::uniform_random;
  if (s == "fixed_center") return LocationPolicy::fixed_center;
  throw ConfigError("unknown location policy '" + s + "'");
}

ContextSource parse_context_source(const std::string& s) {
  if (s == "current") return ContextSource::current;
  if (s == "initial") return ContextSource::initial;
  throw ConfigError("unknown context source '" + s + "'");
}

}  // namespace afh
