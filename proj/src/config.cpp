#include "afh/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

namespace afh {

using nlohmann::json;

namespace {

// Reads fields out of one JSON object, remembering which keys were consumed so
// leftovers can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  std::string path(const std::string& key) const {
    return where_.empty() ? key : where_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(path(key) + " must be an integer");
      const auto wide = v->get<std::int64_t>();
      if (wide < INT32_MIN || wide > INT32_MAX) throw ConfigError(path(key) + " is out of range");
      out = static_cast<int>(wide);
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(path(key) + " must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(path(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(path(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(path(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::vector<int>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(path(key) + " must be an array of integers");
      out.clear();
      for (const json& e : *v) {
        if (!e.is_number_integer()) throw ConfigError(path(key) + " must be an array of integers");
        out.push_back(e.get<int>());
      }
    }
  }
  template <typename E, typename Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(path(key) + " must be a string");
      try {
        out = parse(v->get<std::string>());
      } catch (const Error& e) {
        throw ConfigError(path(key) + ": " + e.what());
      }
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown field " + path(key));
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string to_string(Schedule s) { return s == Schedule::joint ? "joint" : "alternating"; }

Schedule parse_schedule(const std::string& s) {
  if (s == "joint") return Schedule::joint;
  if (s == "alternating") return Schedule::alternating;
  throw ConfigError("unknown schedule '" + s + "' (expected joint or alternating)");
}

// Line of the key named by a dotted path, found by searching each component
// after the previous one. Keys inherited from the preset have no line.
std::optional<std::size_t> locate_key(const std::string& text, const std::string& dotted) {
  std::size_t pos = 0;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = "\"" + dotted.substr(start, dot - start) + "\"";
    for (;;) {
      pos = text.find(key, pos);
      if (pos == std::string::npos) return std::nullopt;
      std::size_t after = pos + key.size();
      while (after < text.size() && std::isspace(static_cast<unsigned char>(text[after]))) ++after;
      if (after < text.size() && text[after] == ':') break;
      pos += key.size();
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + pos, '\n'));
}

// "train.optimizer.lr must ..." -> "train.optimizer.lr"; "policy: lstm_hidden ..." -> "policy.lstm_hidden".
std::string field_of(const std::string& message) {
  std::istringstream in(message);
  std::string first, second;
  in >> first >> second;
  if (!first.empty() && first.back() == ':') return first.substr(0, first.size() - 1) + "." + second;
  return first;
}

void check(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError(field + " " + why);
}

}  // namespace

DatasetSpec DataConfig::spec(const std::string& split) const {
  DatasetSpec s;
  s.root_dir = root_dir;
  s.split_file = split;
  s.crop_height = crop_height;
  s.crop_width = crop_width;
  s.scale = scale;
  return s;
}

RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  cfg.preset = name;
  if (name == "paper") {
    cfg.output_dir = "runs/paper";
    cfg.train.episode.steps = 25;
    cfg.train.episode.geom = {60, 45, 0.5};
    cfg.train.optimizer.iterations = 100000;
    cfg.train.validate_every = 1000;
    cfg.train.checkpoint_every = 1000;
    cfg.data.source = "folder";
    cfg.data.root_dir = "data/faces";
    return cfg;
  }
  if (name == "toy") {
    cfg.output_dir = "runs/toy";
    cfg.policy = {48, 48, 3, 128, 128, true};
    cfg.enhancer.image_height = 48;
    cfg.enhancer.image_width = 48;
    cfg.enhancer.patch_height = 24;
    cfg.enhancer.patch_width = 18;
    cfg.enhancer.global_fc_width = 64;
    cfg.enhancer.conv_spec = {{16, 3}, {24, 3}, {24, 3}, {24, 3}, {24, 3}, {24, 3}, {16, 3}, {3, 3}};
    cfg.train.episode.steps = 6;
    cfg.train.episode.geom = {24, 18, 0.5};
    cfg.train.episode.mask_visited = true;
    cfg.train.optimizer.learning_rate = 5e-4;
    cfg.train.optimizer.iterations = 2500;
    cfg.train.validate_every = 250;
    cfg.train.checkpoint_every = 500;
    cfg.data.crop_height = 48;
    cfg.data.crop_width = 48;
    cfg.ablation.tsweep_steps = {2, 4, 6, 9};
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "' (expected paper or toy)");
}

std::vector<std::string> preset_names() { return {"paper", "toy"}; }

void validate(const RunConfig& cfg) {
  validate(cfg.policy);
  validate(cfg.enhancer);
  const auto& opt = cfg.train.optimizer;
  check(opt.learning_rate > 0.0, "train.optimizer.learning_rate", "must be positive");
  check(opt.beta1 >= 0.0 && opt.beta1 < 1.0, "train.optimizer.beta1", "must lie in [0, 1)");
  check(opt.beta2 >= 0.0 && opt.beta2 < 1.0, "train.optimizer.beta2", "must lie in [0, 1)");
  check(opt.epsilon > 0.0, "train.optimizer.epsilon", "must be positive");
  check(opt.batch_size >= 1, "train.optimizer.batch_size", "must be at least 1");
  check(opt.iterations >= 0, "train.optimizer.iterations", "must be non-negative");
  check(cfg.train.baseline_decay >= 0.0 && cfg.train.baseline_decay < 1.0,
        "train.baseline_decay", "must lie in [0, 1)");
  check(cfg.train.checkpoint_every >= 0, "train.checkpoint_every", "must be non-negative");
  check(cfg.train.validate_every >= 0, "train.validate_every", "must be non-negative");
  const auto& ep = cfg.train.episode;
  check(ep.steps >= 0, "train.episode.steps", "must be non-negative");
  check(ep.geom.pad_value >= 0.0 && ep.geom.pad_value <= 1.0, "train.episode.pad_value",
        "must lie in [0, 1]");
  check(ep.geom.patch_height == cfg.enhancer.patch_height, "train.episode.patch_height",
        "must equal enhancer.patch_height");
  check(ep.geom.patch_width == cfg.enhancer.patch_width, "train.episode.patch_width",
        "must equal enhancer.patch_width");

  check(cfg.enhancer.image_height == cfg.policy.image_height, "enhancer.image_height",
        "must equal policy.image_height");
  check(cfg.enhancer.image_width == cfg.policy.image_width, "enhancer.image_width",
        "must equal policy.image_width");
  check(cfg.enhancer.image_channels == cfg.policy.image_channels, "enhancer.image_channels",
        "must equal policy.image_channels");
  check(cfg.policy.image_channels == 3, "policy.image_channels",
        "must be 3 (datasets are loaded as RGB)");

  const auto& d = cfg.data;
  check(d.source == "toy" || d.source == "folder", "data.source", "must be \"toy\" or \"folder\"");
  check(d.scale == 4 || d.scale == 8, "data.scale", "must be 4 or 8");
  check(d.crop_height > 0 && d.crop_height % d.scale == 0, "data.crop_height",
        "(" + std::to_string(d.crop_height) + ") must be a positive multiple of data.scale");
  check(d.crop_width > 0 && d.crop_width % d.scale == 0, "data.crop_width",
        "(" + std::to_string(d.crop_width) + ") must be a positive multiple of data.scale");
  check(d.crop_height == cfg.policy.image_height, "data.crop_height",
        "must equal policy.image_height");
  check(d.crop_width == cfg.policy.image_width, "data.crop_width", "must equal policy.image_width");
  if (d.source == "folder") check(!d.root_dir.empty(), "data.root_dir", "must be set");
  if (d.source == "toy") {
    check(d.toy_train_count >= 1, "data.toy_train_count", "must be at least 1");
    check(d.toy_test_count >= 1, "data.toy_test_count", "must be at least 1");
  }
  check(!cfg.ablation.tsweep_steps.empty(), "ablation.tsweep_steps", "must not be empty");
  for (int t : cfg.ablation.tsweep_steps) check(t >= 0, "ablation.tsweep_steps", "must be non-negative");
  check(cfg.ablation.no_attention_steps >= 0, "ablation.no_attention_steps", "must be non-negative");
}

json to_json(const PolicyConfig& p) {
  return {{"image_height", p.image_height},   {"image_width", p.image_width},
          {"image_channels", p.image_channels}, {"encoder_width", p.encoder_width},
          {"lstm_hidden", p.lstm_hidden},     {"feed_prev_action", p.feed_prev_action}};
}

json to_json(const EnhancerConfig& e) {
  json conv = json::array();
  for (const ConvLayerSpec& l : e.conv_spec) conv.push_back({l.out_channels, l.kernel});
  return {{"image_height", e.image_height},     {"image_width", e.image_width},
          {"image_channels", e.image_channels}, {"patch_height", e.patch_height},
          {"patch_width", e.patch_width},       {"global_fc_width", e.global_fc_width},
          {"conv_spec", conv}};
}

json to_json(const RunConfig& c) {
  const auto& o = c.train.optimizer;
  const auto& ep = c.train.episode;
  return {
      {"preset", c.preset},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"resume_checkpoint", c.resume_checkpoint},
      {"policy", to_json(c.policy)},
      {"enhancer", to_json(c.enhancer)},
      {"train",
       {{"optimizer",
         {{"learning_rate", o.learning_rate},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"epsilon", o.epsilon},
          {"batch_size", o.batch_size},
          {"iterations", o.iterations}}},
        {"episode",
         {{"steps", ep.steps},
          {"patch_height", ep.geom.patch_height},
          {"patch_width", ep.geom.patch_width},
          {"pad_value", ep.geom.pad_value},
          {"mode", to_string(ep.mode)},
          {"policy", to_string(ep.policy)},
          {"context", to_string(ep.context)},
          {"mask_visited", ep.mask_visited},
          {"keep_patches", ep.keep_patches}}},
        {"baseline_decay", c.train.baseline_decay},
        {"train_policy", c.train.train_policy},
        {"train_enhancer", c.train.train_enhancer},
        {"schedule", to_string(c.train.schedule)},
        {"input_relative_return", c.train.input_relative_return},
        {"checkpoint_every", c.train.checkpoint_every},
        {"validate_every", c.train.validate_every}}},
      {"data",
       {{"source", c.data.source},
        {"root_dir", c.data.root_dir},
        {"train_split", c.data.train_split},
        {"test_split", c.data.test_split},
        {"crop_height", c.data.crop_height},
        {"crop_width", c.data.crop_width},
        {"scale", c.data.scale},
        {"toy_train_count", c.data.toy_train_count},
        {"toy_test_count", c.data.toy_test_count},
        {"toy_train_seed", c.data.toy_train_seed},
        {"toy_test_seed", c.data.toy_test_seed}}},
      {"ablation",
       {{"tsweep_steps", c.ablation.tsweep_steps},
        {"no_attention_steps", c.ablation.no_attention_steps}}},
  };
}

namespace {

void read_policy(const json& j, const std::string& where, PolicyConfig& p) {
  Reader r(j, where);
  r.get("image_height", p.image_height);
  r.get("image_width", p.image_width);
  r.get("image_channels", p.image_channels);
  r.get("encoder_width", p.encoder_width);
  r.get("lstm_hidden", p.lstm_hidden);
  r.get("feed_prev_action", p.feed_prev_action);
  r.finish();
}

void read_enhancer(const json& j, const std::string& where, EnhancerConfig& e) {
  Reader r(j, where);
  r.get("image_height", e.image_height);
  r.get("image_width", e.image_width);
  r.get("image_channels", e.image_channels);
  r.get("patch_height", e.patch_height);
  r.get("patch_width", e.patch_width);
  r.get("global_fc_width", e.global_fc_width);
  if (const json* conv = r.find("conv_spec")) {
    const std::string field = r.path("conv_spec");
    if (!conv->is_array()) throw ConfigError(field + " must be an array of [channels, kernel]");
    e.conv_spec.clear();
    for (const json& layer : *conv) {
      if (!layer.is_array() || layer.size() != 2 || !layer[0].is_number_integer() ||
          !layer[1].is_number_integer()) {
        throw ConfigError(field + " entries must be [channels, kernel] integer pairs");
      }
      e.conv_spec.push_back({layer[0].get<int>(), layer[1].get<int>()});
    }
  }
  r.finish();
}

}  // namespace

PolicyConfig policy_config_from_json(const json& j, const std::string& where) {
  PolicyConfig p;
  read_policy(j, where, p);
  return p;
}

EnhancerConfig enhancer_config_from_json(const json& j, const std::string& where) {
  EnhancerConfig e;
  read_enhancer(j, where, e);
  return e;
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::string preset = "paper";
  if (auto it = j.find("preset"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("preset must be a string");
    preset = it->get<std::string>();
  }
  RunConfig c = preset_config(preset);
  Reader r(j, "");
  r.get("preset", c.preset);
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("resume_checkpoint", c.resume_checkpoint);
  if (const json* p = r.find("policy")) read_policy(*p, "policy", c.policy);
  if (const json* e = r.find("enhancer")) read_enhancer(*e, "enhancer", c.enhancer);
  if (const json* t = r.find("train")) {
    Reader tr(*t, "train");
    if (const json* o = tr.find("optimizer")) {
      Reader orr(*o, "train.optimizer");
      auto& opt = c.train.optimizer;
      orr.get("learning_rate", opt.learning_rate);
      orr.get("beta1", opt.beta1);
      orr.get("beta2", opt.beta2);
      orr.get("epsilon", opt.epsilon);
      orr.get("batch_size", opt.batch_size);
      orr.get("iterations", opt.iterations);
      orr.finish();
    }
    if (const json* e = tr.find("episode")) {
      Reader er(*e, "train.episode");
      auto& ep = c.train.episode;
      er.get("steps", ep.steps);
      er.get("patch_height", ep.geom.patch_height);
      er.get("patch_width", ep.geom.patch_width);
      er.get("pad_value", ep.geom.pad_value);
      er.get_enum("mode", ep.mode, parse_selection_mode);
      er.get_enum("policy", ep.policy, parse_location_policy);
      er.get_enum("context", ep.context, parse_context_source);
      er.get("mask_visited", ep.mask_visited);
      er.get("keep_patches", ep.keep_patches);
      er.finish();
    }
    tr.get("baseline_decay", c.train.baseline_decay);
    tr.get("train_policy", c.train.train_policy);
    tr.get("train_enhancer", c.train.train_enhancer);
    tr.get_enum("schedule", c.train.schedule, parse_schedule);
    tr.get("input_relative_return", c.train.input_relative_return);
    tr.get("checkpoint_every", c.train.checkpoint_every);
    tr.get("validate_every", c.train.validate_every);
    tr.finish();
  }
  if (const json* d = r.find("data")) {
    Reader dr(*d, "data");
    dr.get("source", c.data.source);
    dr.get("root_dir", c.data.root_dir);
    dr.get("train_split", c.data.train_split);
    dr.get("test_split", c.data.test_split);
    dr.get("crop_height", c.data.crop_height);
    dr.get("crop_width", c.data.crop_width);
    dr.get("scale", c.data.scale);
    dr.get("toy_train_count", c.data.toy_train_count);
    dr.get("toy_test_count", c.data.toy_test_count);
    dr.get("toy_train_seed", c.data.toy_train_seed);
    dr.get("toy_test_seed", c.data.toy_test_seed);
    dr.finish();
  }
  if (const json* a = r.find("ablation")) {
    Reader ar(*a, "ablation");
    ar.get("tsweep_steps", c.ablation.tsweep_steps);
    ar.get("no_attention_steps", c.ablation.no_attention_steps);
    ar.finish();
  }
  r.finish();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": invalid JSON");
  }
  RunConfig cfg;
  try {
    cfg = config_from_json(j);
    validate(cfg);
  } catch (const ConfigError& e) {
    const auto line = locate_key(text, field_of(e.what()));
    throw ConfigError(path.string() + (line ? ":" + std::to_string(*line) : std::string()) + ": " +
                      e.what());
  }
  return cfg;
}

RunConfig resolve_config(const std::string& spec) {
  for (const std::string& name : preset_names()) {
    if (spec == name) return preset_config(name);
  }
  return load_config(spec);
}

std::string dump_config(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write config " + path.string());
  out << dump_config(cfg);
  if (!out) throw IoError("failed writing config " + path.string());
}

}  // namespace afh
