#include "afh/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "afh/config.hpp"

namespace afh {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'A', 'F', 'H', '1'};

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename U>
void put_le(std::string& out, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <typename T>
void append_payload(std::string& out, const Tensor<T>& t) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T v : t.data) put_le(out, std::bit_cast<Bits>(v));
}

template <typename T>
void collect(std::vector<std::pair<std::string, const Tensor<T>*>>& out, const std::string& prefix,
             const NamedTensors<T>& tensors) {
  for (const auto& [name, t] : tensors) out.emplace_back(prefix + name, &t);
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TrainState<T>& state) {
  check_param_shapes(state.params);
  std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
  collect(tensors, "policy/", state.params.policy);
  collect(tensors, "enhancer/", state.params.enhancer);
  collect(tensors, "adam.m/policy/", state.adam.m.policy);
  collect(tensors, "adam.m/enhancer/", state.adam.m.enhancer);
  collect(tensors, "adam.v/policy/", state.adam.v.policy);
  collect(tensors, "adam.v/enhancer/", state.adam.v.enhancer);

  json manifest = json::array();
  std::string payload;
  for (const auto& [name, t] : tensors) {
    const std::size_t offset = payload.size();
    append_payload(payload, *t);
    manifest.push_back({{"name", name},
                        {"dtype", dtype_name<T>()},
                        {"shape", t->shape},
                        {"offset", offset},
                        {"nbytes", payload.size() - offset}});
  }
  const json header = {
      {"format", "AFH1"},
      {"policy_config", to_json(state.params.policy_config)},
      {"enhancer_config", to_json(state.params.enhancer_config)},
      {"iteration", state.iteration},
      {"adam_step", state.adam.step},
      {"baseline",
       {{"value_bits", std::bit_cast<std::uint64_t>(state.baseline.value)},
        {"decay_bits", std::bit_cast<std::uint64_t>(state.baseline.decay)},
        {"initialized", state.baseline.initialized}}},
      {"tensors", manifest},
  };
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += payload;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = "checkpoint " + path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError(where + ": missing AFH1 magic");
  }
  const std::uint64_t header_len = get_le<std::uint64_t>(raw + 4);
  if (header_len > bytes.size() - 12) throw IoError(where + ": truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(12, header_len));
  } catch (const json::exception& e) {
    throw IoError(where + ": corrupt header (" + e.what() + ")");
  }
  const std::size_t payload_start = 12 + header_len;
  const std::size_t payload_size = bytes.size() - payload_start;

  TrainState<T> state;
  try {
    state.params.policy_config = policy_config_from_json(header.at("policy_config"), "policy_config");
    state.params.enhancer_config =
        enhancer_config_from_json(header.at("enhancer_config"), "enhancer_config");
    state.iteration = header.at("iteration").get<int>();
    state.adam.step = header.at("adam_step").get<std::int64_t>();
    const json& b = header.at("baseline");
    state.baseline.value = std::bit_cast<double>(b.at("value_bits").get<std::uint64_t>());
    state.baseline.decay = std::bit_cast<double>(b.at("decay_bits").get<std::uint64_t>());
    state.baseline.initialized = b.at("initialized").get<bool>();

    std::size_t expected_offset = 0;
    for (const json& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto dtype = entry.at("dtype").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<int>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto nbytes = entry.at("nbytes").get<std::size_t>();
      const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
      if (width == 0) throw IoError(where + ": unknown dtype " + dtype + " for " + name);
      for (int d : shape) {
        if (d < 0) throw IoError(where + ": negative dimension in " + name);
      }
      const std::size_t n = Tensor<T>::count(shape);
      if (nbytes != n * width || offset != expected_offset || offset + nbytes > payload_size) {
        throw IoError(where + ": inconsistent manifest entry for " + name);
      }
      expected_offset += nbytes;
      Tensor<T> t(shape);
      const unsigned char* p = raw + payload_start + offset;
      for (std::size_t i = 0; i < n; ++i) {
        t.data[i] = width == 4
                        ? static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i)))
                        : static_cast<T>(std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i)));
      }
      const auto place = [&](const std::string& prefix, NamedTensors<T>& into) {
        if (name.rfind(prefix, 0) != 0) return false;
        into.emplace(name.substr(prefix.size()), std::move(t));
        return true;
      };
      if (!place("policy/", state.params.policy) && !place("enhancer/", state.params.enhancer) &&
          !place("adam.m/policy/", state.adam.m.policy) &&
          !place("adam.m/enhancer/", state.adam.m.enhancer) &&
          !place("adam.v/policy/", state.adam.v.policy) &&
          !place("adam.v/enhancer/", state.adam.v.enhancer)) {
        throw IoError(where + ": unexpected tensor " + name);
      }
    }
    if (expected_offset != payload_size) throw IoError(where + ": trailing bytes after payloads");
  } catch (const json::exception& e) {
    throw IoError(where + ": corrupt header (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw IoError(where + ": corrupt config block (" + e.what() + ")");
  }
  check_param_shapes(state.params);
  return state;
}

template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& path, const PolicyConfig& policy,
                              const EnhancerConfig& enhancer) {
  TrainState<T> state = load_checkpoint<T>(path);
  ParamSet<T> probe = state.params;
  probe.policy_config = policy;
  probe.enhancer_config = enhancer;
  check_param_shapes(probe);
  if (state.params.policy_config != policy || state.params.enhancer_config != enhancer) {
    throw ShapeError("checkpoint " + path.string() + " was written for different network configs");
  }
  return state;
}

template void save_checkpoint<float>(const std::filesystem::path&, const TrainState<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const TrainState<double>&);
template TrainState<float> load_checkpoint<float>(const std::filesystem::path&);
template TrainState<double> load_checkpoint<double>(const std::filesystem::path&);
template TrainState<float> load_checkpoint<float>(const std::filesystem::path&,
                                                  const PolicyConfig&, const EnhancerConfig&);
template TrainState<double> load_checkpoint<double>(const std::filesystem::path&,
                                                    const PolicyConfig&, const EnhancerConfig&);

}  // namespace afh
