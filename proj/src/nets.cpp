#include "afh/nets.hpp"

#include <cmath>
#include <string>

#include "afh/random.hpp"

namespace afh {

std::vector<ConvLayerSpec> default_conv_spec(int channels) {
  return {{16, 3}, {32, 7}, {64, 7}, {64, 7}, {64, 7}, {32, 7}, {16, 3}, {channels, 5}};
}

void validate(const PolicyConfig& cfg) {
  if (cfg.image_height < 1 || cfg.image_width < 1) {
    throw ConfigError("policy: image dimensions must be positive");
  }
  if (cfg.image_channels != 1 && cfg.image_channels != 3) {
    throw ConfigError("policy: image_channels must be 1 or 3");
  }
  if (cfg.encoder_width < 1) throw ConfigError("policy: encoder_width must be positive");
  if (cfg.lstm_hidden < 1) throw ConfigError("policy: lstm_hidden must be positive");
}

void validate(const EnhancerConfig& cfg) {
  if (cfg.image_height < 1 || cfg.image_width < 1) {
    throw ConfigError("enhancer: image dimensions must be positive");
  }
  if (cfg.image_channels != 1 && cfg.image_channels != 3) {
    throw ConfigError("enhancer: image_channels must be 1 or 3");
  }
  if (cfg.patch_height < 1 || cfg.patch_width < 1) {
    throw ConfigError("enhancer: patch dimensions must be positive");
  }
  if (cfg.global_fc_width < 1) throw ConfigError("enhancer: global_fc_width must be positive");
  if (cfg.conv_spec.empty()) throw ConfigError("enhancer: conv_spec must not be empty");
  for (const ConvLayerSpec& layer : cfg.conv_spec) {
    if (layer.out_channels < 1 || layer.kernel < 1 || layer.kernel % 2 == 0) {
      throw ConfigError("enhancer: conv layers need positive channels and odd kernels");
    }
  }
  if (cfg.conv_spec.back().out_channels != cfg.image_channels) {
    throw ConfigError("enhancer: last conv layer must output image_channels channels");
  }
}

namespace {

struct TensorPlan {
  ParamGroup group;
  std::string name;
  std::vector<int> shape;
  double bound;   // uniform(-bound, bound); 0 means constant fill
  double fill;
};

std::vector<TensorPlan> plan(const PolicyConfig& p, const EnhancerConfig& e) {
  const auto he = [](int fan_in) { return std::sqrt(6.0 / fan_in); };
  const auto lecun = [](int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  std::vector<TensorPlan> out;

  const int lstm_in = p.encoder_width + (p.feed_prev_action ? 2 : 0);
  const int gates = 4 * p.lstm_hidden;
  out.push_back({ParamGroup::policy, "encoder.weight", {p.encoder_width, p.image_size()},
                 he(p.image_size()), 0.0});
  out.push_back({ParamGroup::policy, "encoder.bias", {p.encoder_width}, 0.0, 0.0});
  out.push_back({ParamGroup::policy, "lstm.input_weight", {gates, lstm_in}, lecun(lstm_in), 0.0});
  out.push_back({ParamGroup::policy, "lstm.hidden_weight", {gates, p.lstm_hidden},
                 lecun(p.lstm_hidden), 0.0});
  out.push_back({ParamGroup::policy, "lstm.bias", {gates}, 0.0, 0.0});
  out.push_back({ParamGroup::policy, "head.weight", {p.action_count(), p.lstm_hidden},
                 lecun(p.lstm_hidden), 0.0});
  out.push_back({ParamGroup::policy, "head.bias", {p.action_count()}, 0.0, 0.0});

  out.push_back({ParamGroup::enhancer, "global1.weight", {e.global_fc_width, e.image_size()},
                 he(e.image_size()), 0.0});
  out.push_back({ParamGroup::enhancer, "global1.bias", {e.global_fc_width}, 0.0, 0.0});
  out.push_back({ParamGroup::enhancer, "global2.weight", {e.patch_area(), e.global_fc_width},
                 lecun(e.global_fc_width), 0.0});
  out.push_back({ParamGroup::enhancer, "global2.bias", {e.patch_area()}, 0.0, 0.0});
  int in_ch = e.image_channels + 1;
  for (std::size_t i = 0; i < e.conv_spec.size(); ++i) {
    const ConvLayerSpec& layer = e.conv_spec[i];
    const bool last = i + 1 == e.conv_spec.size();
    const int fan_in = in_ch * layer.kernel * layer.kernel;
    const std::string prefix = "conv" + std::to_string(i + 1);
    out.push_back({ParamGroup::enhancer, prefix + ".weight",
                   {layer.out_channels, in_ch, layer.kernel, layer.kernel},
                   last ? 0.0 : he(fan_in), 0.0});
    out.push_back({ParamGroup::enhancer, prefix + ".bias", {layer.out_channels}, 0.0, 0.0});
    in_ch = layer.out_channels;
  }
  return out;
}

std::string conv_name(std::size_t layer, const char* what) {
  return "conv" + std::to_string(layer + 1) + "." + what;
}

}  // namespace

template <typename T>
std::size_t ParamSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : policy) n += v.numel();
  for (const auto& [k, v] : enhancer) n += v.numel();
  return n;
}

template <typename T>
ParamSet<T> init_params(const PolicyConfig& policy_cfg, const EnhancerConfig& enhancer_cfg,
                        std::uint64_t seed) {
  validate(policy_cfg);
  validate(enhancer_cfg);
  ParamSet<T> params;
  params.policy_config = policy_cfg;
  params.enhancer_config = enhancer_cfg;
  Rng rng(seed);
  for (const TensorPlan& t : plan(policy_cfg, enhancer_cfg)) {
    Tensor<T> tensor(t.shape, static_cast<T>(t.fill));
    if (t.bound > 0.0) {
      for (T& v : tensor.data) v = static_cast<T>(uniform(rng, -t.bound, t.bound));
    }
    params.group(t.group).emplace(t.name, std::move(tensor));
  }
  // Forget-gate bias (gate order i, f, g, o).
  auto& bias = params.policy.at("lstm.bias").data;
  const int hidden = policy_cfg.lstm_hidden;
  for (int i = hidden; i < 2 * hidden; ++i) bias[i] = T(1);
  return params;
}

template <typename T>
void check_param_shapes(const ParamSet<T>& params) {
  validate(params.policy_config);
  validate(params.enhancer_config);
  for (const TensorPlan& t : plan(params.policy_config, params.enhancer_config)) {
    const auto& group = params.group(t.group);
    const auto it = group.find(t.name);
    if (it == group.end()) throw ShapeError("missing parameter " + t.name);
    if (it->second.shape != t.shape || it->second.numel() != Tensor<T>::count(t.shape)) {
      throw ShapeError("parameter " + t.name + " has shape " + shape_string(it->second.shape) +
                       ", config expects " + shape_string(t.shape));
    }
  }
  const std::size_t expected = plan(params.policy_config, params.enhancer_config).size();
  if (params.policy.size() + params.enhancer.size() != expected) {
    throw ShapeError("parameter set has unexpected extra tensors");
  }
}

template <typename T>
ad::Var<T> bind(ad::Tape<T>& tape, const ParamSet<T>& params, ParamGroup group,
                const std::string& name) {
  const auto& tensors = params.group(group);
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw ShapeError("unknown parameter " + name);
  return tape.param((group == ParamGroup::policy ? "policy/" : "enhancer/") + name, it->second);
}

template <typename T>
Tensor<T> to_chw(const Image& img) {
  const int h = img.height(), w = img.width(), c = img.channels();
  Tensor<T> t({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        t.data[(static_cast<std::size_t>(ch) * h + y) * w + x] = static_cast<T>(img.at(y, x, ch));
  return t;
}

template <typename T>
Image from_chw(const Tensor<T>& t, int height, int width, int channels) {
  Image img(height, width, channels);
  for (int ch = 0; ch < channels; ++ch)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        img.at(y, x, ch) = static_cast<double>(t.data[(static_cast<std::size_t>(ch) * height + y) * width + x]);
  return img;
}

namespace {

template <typename T>
Tensor<T> flat(const Image& img) {
  Tensor<T> t({static_cast<int>(img.size())});
  for (std::size_t i = 0; i < img.size(); ++i) t.data[i] = static_cast<T>(img.data()[i]);
  return t;
}

void check_image(const Image& img, int h, int w, int c, const char* what) {
  if (img.height() != h || img.width() != w || img.channels() != c) {
    throw ShapeError(std::string(what) + " is " + std::to_string(img.height()) + "x" +
                     std::to_string(img.width()) + "x" + std::to_string(img.channels()) +
                     ", network expects " + std::to_string(h) + "x" + std::to_string(w) + "x" +
                     std::to_string(c));
  }
}

}  // namespace

template <typename T>
ad::Var<T> memory_var(ad::Tape<T>& tape, const std::vector<double>& values) {
  Tensor<T> t({static_cast<int>(values.size())});
  for (std::size_t i = 0; i < values.size(); ++i) t.data[i] = static_cast<T>(values[i]);
  return tape.constant(std::move(t));
}

template <typename T>
PolicyStep<T> policy_graph(ad::Tape<T>& tape, const ParamSet<T>& params, const Image& img,
                           ad::Var<T> hidden, ad::Var<T> cell,
                           std::optional<PatchLocation> prev_loc) {
  using namespace ad;
  const PolicyConfig& cfg = params.policy_config;
  check_image(img, cfg.image_height, cfg.image_width, cfg.image_channels, "policy input");
  const int hd = cfg.lstm_hidden;
  if (static_cast<int>(hidden.numel()) != hd || static_cast<int>(cell.numel()) != hd) {
    throw ShapeError("recurrent memory size does not match lstm_hidden");
  }
  const auto p = [&](const char* name) { return bind(tape, params, ParamGroup::policy, name); };

  Var<T> x = tape.constant(flat<T>(img));
  Var<T> enc = relu(linear(p("encoder.weight"), p("encoder.bias"), x));
  Var<T> lstm_in = enc;
  if (cfg.feed_prev_action) {
    Tensor<T> prev({2}, T(0));
    if (prev_loc) {
      prev.data[0] = static_cast<T>(static_cast<double>(prev_loc->x) / cfg.image_width);
      prev.data[1] = static_cast<T>(static_cast<double>(prev_loc->y) / cfg.image_height);
    }
    lstm_in = concat(enc, tape.constant(std::move(prev)));
  }
  Var<T> gates = add(linear(p("lstm.input_weight"), p("lstm.bias"), lstm_in),
                     linear(p("lstm.hidden_weight"), hidden));
  Var<T> in_gate = sigmoid(slice(gates, 0, hd));
  Var<T> forget_gate = sigmoid(slice(gates, hd, hd));
  Var<T> candidate = ad::tanh(slice(gates, 2 * hd, hd));
  Var<T> out_gate = sigmoid(slice(gates, 3 * hd, hd));
  Var<T> new_cell = add(mul(forget_gate, cell), mul(in_gate, candidate));
  Var<T> new_hidden = mul(out_gate, ad::tanh(new_cell));
  Var<T> logits = linear(p("head.weight"), p("head.bias"), new_hidden);
  return {log_softmax(logits), new_hidden, new_cell};
}

template <typename T>
EnhanceStep<T> enhancer_graph(ad::Tape<T>& tape, const ParamSet<T>& params, const Image& patch,
                              const Image& whole) {
  using namespace ad;
  const EnhancerConfig& cfg = params.enhancer_config;
  check_image(patch, cfg.patch_height, cfg.patch_width, cfg.image_channels, "enhancer patch");
  check_image(whole, cfg.image_height, cfg.image_width, cfg.image_channels, "enhancer context");
  const auto p = [&](const std::string& name) {
    return bind(tape, params, ParamGroup::enhancer, name);
  };
  const int ph = cfg.patch_height, pw = cfg.patch_width, ch = cfg.image_channels;

  Var<T> context = tape.constant(flat<T>(whole));
  Var<T> g1 = relu(linear(p("global1.weight"), p("global1.bias"), context));
  Var<T> g2 = linear(p("global2.weight"), p("global2.bias"), g1);
  Var<T> base = tape.constant(to_chw<T>(patch));
  Var<T> x = concat(base, g2, {ch + 1, ph, pw});
  const std::size_t layers = cfg.conv_spec.size();
  for (std::size_t i = 0; i < layers; ++i) {
    x = conv2d(x, p(conv_name(i, "weight")), p(conv_name(i, "bias")));
    if (i + 1 < layers) x = relu(x);
  }
  return {clamp01(add(base, x)), x};
}

template <typename T>
std::pair<ProbMap, RecurrentMemory> policy_forward(const ParamSet<T>& params, const Image& img,
                                                   const RecurrentMemory& mem,
                                                   std::optional<PatchLocation> prev_loc) {
  ad::Tape<T> tape;
  tape.set_track_params(false);
  const PolicyStep<T> step = policy_graph(tape, params, img, memory_var(tape, mem.hidden),
                                          memory_var(tape, mem.cell), prev_loc);
  ProbMap pm;
  pm.height = params.policy_config.image_height;
  pm.width = params.policy_config.image_width;
  const auto& lp = step.log_probs.value().data;
  pm.p.resize(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) pm.p[i] = std::exp(static_cast<double>(lp[i]));
  RecurrentMemory next;
  next.hidden.assign(step.hidden.value().data.begin(), step.hidden.value().data.end());
  next.cell.assign(step.cell.value().data.begin(), step.cell.value().data.end());
  return {std::move(pm), std::move(next)};
}

template <typename T>
Image enhance_forward(const ParamSet<T>& params, const Image& patch, const Image& whole) {
  ad::Tape<T> tape;
  tape.set_track_params(false);
  const EnhanceStep<T> step = enhancer_graph(tape, params, patch, whole);
  const auto& residual = step.residual.value().data;
  const int h = patch.height(), w = patch.width(), c = patch.channels();
  // Sum in double so a zero residual reproduces the patch bit-exactly.
  Image out(h, w, c);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(y, x, ch) = clamp01(
            patch.at(y, x, ch) +
            static_cast<double>(residual[(static_cast<std::size_t>(ch) * h + y) * w + x]));
  return out;
}

template <typename T>
Gradients<T> gradients(const ParamSet<T>& params,
                       const std::function<ad::Var<T>(ad::Tape<T>&)>& loss_fn) {
  ad::Tape<T> tape;
  for (const auto& [name, t] : params.policy) bind(tape, params, ParamGroup::policy, name);
  for (const auto& [name, t] : params.enhancer) bind(tape, params, ParamGroup::enhancer, name);
  const ad::Var<T> loss = loss_fn(tape);
  if (loss.value().numel() != 1) throw ShapeError("gradients: loss must be a scalar");
  tape.backward(loss);
  Gradients<T> out;
  for (auto& [name, g] : tape.param_grads()) {
    if (name.starts_with("policy/")) {
      out.policy.emplace(name.substr(7), std::move(g));
    } else {
      out.enhancer.emplace(name.substr(9), std::move(g));
    }
  }
  return out;
}

#define AFH_INSTANTIATE_NETS(T)                                                                \
  template struct ParamSet<T>;                                                                 \
  template ParamSet<T> init_params<T>(const PolicyConfig&, const EnhancerConfig&,              \
                                      std::uint64_t);                                          \
  template void check_param_shapes<T>(const ParamSet<T>&);                                     \
  template ad::Var<T> bind<T>(ad::Tape<T>&, const ParamSet<T>&, ParamGroup,                    \
                              const std::string&);                                             \
  template Tensor<T> to_chw<T>(const Image&);                                                  \
  template Image from_chw<T>(const Tensor<T>&, int, int, int);                                 \
  template ad::Var<T> memory_var<T>(ad::Tape<T>&, const std::vector<double>&);                 \
  template PolicyStep<T> policy_graph<T>(ad::Tape<T>&, const ParamSet<T>&, const Image&,       \
                                         ad::Var<T>, ad::Var<T>, std::optional<PatchLocation>); \
  template EnhanceStep<T> enhancer_graph<T>(ad::Tape<T>&, const ParamSet<T>&, const Image&,    \
                                            const Image&);                                     \
  template std::pair<ProbMap, RecurrentMemory> policy_forward<T>(                              \
      const ParamSet<T>&, const Image&, const RecurrentMemory&, std::optional<PatchLocation>); \
  template Image enhance_forward<T>(const ParamSet<T>&, const Image&, const Image&);           \
  template Gradients<T> gradients<T>(const ParamSet<T>&,                                       \
                                     const std::function<ad::Var<T>(ad::Tape<T>&)>&);

AFH_INSTANTIATE_NETS(float)
AFH_INSTANTIATE_NETS(double)

}  // namespace afh
