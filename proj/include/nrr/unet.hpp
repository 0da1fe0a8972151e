#pragma once

// Encoder-decoder with skip connections mapping a degraded render to an RGB
// prediction plus a soft foreground mask.
//
// Layer grammar (N_0 = n_init, N_i = growth^i * n_init):
//   enc0            3x3  3 -> N_0
//   down<i>.a       4x4 stride 2 pad 1  N_{i-1} -> N_i        i = 1..4
//   down<i>.b       3x3  N_i -> N_i
//   bottleneck.a/b  3x3  N_4 -> N_4
//   up<i>.a         bilinear x2, then 3x3  in -> N_i          i = 4..1
//                   (in = N_4 for i = 4, else 2 N_{i+1})
//   up<i>.b         concat with the encoder output at that scale, 3x3 -> 2 N_i
//   extra1.a/b      optional: bilinear x2, 3x3 -> N_0, 3x3 -> N_0
//   final           3x3 -> 4 channels
// Every convolution is followed by ReLU, including the final one.

#include <array>
#include <chrono>
#include <type_traits>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nrr/errors.hpp"
#include "nrr/image.hpp"
#include "nrr/nn.hpp"
#include "nrr/rng.hpp"
#include "nrr/tensor_file.hpp"

namespace nrr {

struct ArchConfig {
  int n_init = 32;
  int growth = 2;
  int extra_upsample_blocks = 0;
  int input_channels = 3;
  int output_channels = 4;
  std::uint64_t seed = 42;

  /// N_i = growth^i * n_init.
  int filters(int level) const {
    int n = n_init;
    for (int i = 0; i < level; ++i) n *= growth;
    return n;
  }

  void validate() const {
    detail::require(n_init == 4 || n_init == 8 || n_init == 16 || n_init == 32 || n_init == 64,
                    "arch.n_init must be one of 16, 32, 64 (4 and 8 for tests)");
    detail::require(growth >= 1 && growth <= 4, "arch.growth must be an integer in [1,4]");
    detail::require(extra_upsample_blocks == 0 || extra_upsample_blocks == 1,
                    "arch.extra_upsample_blocks must be 0 or 1");
    detail::require(input_channels == 3, "arch.input_channels must be 3");
    detail::require(output_channels == 4, "arch.output_channels must be 4");
  }

  bool operator==(const ArchConfig&) const = default;
};

inline nlohmann::json to_json(const ArchConfig& a) {
  return {{"n_init", a.n_init}, {"growth", a.growth}, {"extra_upsample_blocks", a.extra_upsample_blocks},
          {"input_channels", a.input_channels}, {"output_channels", a.output_channels}, {"seed", a.seed}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.n_init = j.at("n_init").get<int>();
  a.growth = j.at("growth").get<int>();
  a.extra_upsample_blocks = j.at("extra_upsample_blocks").get<int>();
  a.input_channels = j.at("input_channels").get<int>();
  a.output_channels = j.at("output_channels").get<int>();
  a.seed = j.at("seed").get<std::uint64_t>();
  return a;
}

struct LayerSpec {
  std::string name;
  nn::ConvShape shape;
};

/// Ordered layer table implied by the configuration.
inline std::vector<LayerSpec> layer_specs(const ArchConfig& cfg) {
  cfg.validate();
  std::vector<LayerSpec> t;
  const int n0 = cfg.n_init;
  t.push_back({"enc0", {cfg.input_channels, n0, 3, 1, 1}});
  for (int i = 1; i <= 4; ++i) {
    t.push_back({"down" + std::to_string(i) + ".a", {cfg.filters(i - 1), cfg.filters(i), 4, 2, 1}});
    t.push_back({"down" + std::to_string(i) + ".b", {cfg.filters(i), cfg.filters(i), 3, 1, 1}});
  }
  t.push_back({"bottleneck.a", {cfg.filters(4), cfg.filters(4), 3, 1, 1}});
  t.push_back({"bottleneck.b", {cfg.filters(4), cfg.filters(4), 3, 1, 1}});
  int in = cfg.filters(4);
  for (int i = 4; i >= 1; --i) {
    t.push_back({"up" + std::to_string(i) + ".a", {in, cfg.filters(i), 3, 1, 1}});
    t.push_back({"up" + std::to_string(i) + ".b", {cfg.filters(i) + cfg.filters(i - 1), 2 * cfg.filters(i), 3, 1, 1}});
    in = 2 * cfg.filters(i);
  }
  if (cfg.extra_upsample_blocks == 1) {
    t.push_back({"extra1.a", {in, n0, 3, 1, 1}});
    t.push_back({"extra1.b", {n0, n0, 3, 1, 1}});
    in = n0;
  }
  t.push_back({"final", {in, cfg.output_channels, 3, 1, 1}});
  return t;
}

template <class T>
struct Model {
  ArchConfig arch;
  std::vector<std::string> names;
  std::vector<nn::ConvParam<T>> layers;

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw ValidationError("no layer named '" + name + "'");
  }
  nn::ConvParam<T>& layer(const std::string& name) { return layers[index(name)]; }
  const nn::ConvParam<T>& layer(const std::string& name) const { return layers[index(name)]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
  }

  std::uint64_t parameter_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& l : layers) {
      h = nn::hash_values(std::span<const T>(l.weight), h);
      h = nn::hash_values(std::span<const T>(l.bias), h);
    }
    return h;
  }

  /// Same shapes, all zero (gradient accumulators).
  Model zeros_like() const {
    Model m = *this;
    for (auto& l : m.layers) l.zero();
    return m;
  }

  template <class U>
  Model<U> cast() const {
    Model<U> m;
    m.arch = arch;
    m.names = names;
    for (const auto& l : layers) {
      nn::ConvParam<U> p(l.shape);
      for (std::size_t i = 0; i < l.weight.size(); ++i) p.weight[i] = static_cast<U>(l.weight[i]);
      for (std::size_t i = 0; i < l.bias.size(); ++i) p.bias[i] = static_cast<U>(l.bias[i]);
      m.layers.push_back(std::move(p));
    }
    return m;
  }

  bool operator==(const Model&) const = default;
};

/// Builds the network with fan-in scaled random kernels (seeded by
/// arch.seed) and zero biases, except the final layer whose bias starts at
/// `final_bias` so the output ReLU is initially active.
template <class T>
Model<T> build(const ArchConfig& cfg, double final_bias = 0.5) {
  Model<T> m;
  m.arch = cfg;
  std::uint64_t k = 0;
  for (const auto& spec : layer_specs(cfg)) {
    nn::ConvParam<T> p(spec.shape);
    auto rng = make_rng({cfg.seed, 0x0E7ULL, k++});
    p.init_he(rng);
    m.names.push_back(spec.name);
    m.layers.push_back(std::move(p));
  }
  for (auto& b : m.layers.back().bias) b = static_cast<T>(final_bias);
  return m;
}

template <class T>
struct Prediction {
  Image<T> rgb;
  Mask<T> mask;  // soft, non-negative, unclamped
};

/// Activations kept for backward.
template <class T>
struct ForwardCache {
  std::vector<nn::Planes<T>> in;   // conv inputs, by layer index
  std::vector<nn::Planes<T>> out;  // post-ReLU outputs, by layer index
  std::vector<std::pair<int, int>> up_src;  // extent before each upsample, in order
  int in_h = 0, in_w = 0;
};

namespace detail_unet {

template <class T>
nn::Planes<T> apply(const Model<T>& m, std::size_t li, const nn::Planes<T>& x, ForwardCache<T>* cache) {
  nn::Planes<T> y = nn::conv2d(x, m.layers[li]);
  nn::relu_inplace(y);
  if (cache) {
    cache->in[li] = x;
    cache->out[li] = y;
  }
  return y;
}

template <class T>
nn::Planes<T> apply_back(const Model<T>& m, std::size_t li, const ForwardCache<T>& cache, nn::Planes<T> g,
                         Model<T>& grads, bool want_dx = true) {
  nn::relu_backward_inplace(cache.out[li], g);
  return nn::conv2d_backward(cache.in[li], m.layers[li], g, grads.layers[li], want_dx);
}

}  // namespace detail_unet

/// Wall-clock seconds per layer, accumulated over forward calls. Upsample
/// and concatenation time is charged to the layer that consumes it.
struct LayerTimes {
  std::vector<double> seconds;
};

/// Raw 4-channel output planes. Input extents must be multiples of 16.
template <class T>
nn::Planes<T> forward_planes(const Model<T>& m, const Image<T>& input, std::type_identity_t<ForwardCache<T>>* cache = nullptr,
                             LayerTimes* times = nullptr) {
  using clock = std::chrono::steady_clock;
  auto last = clock::now();
  if (times) times->seconds.resize(m.layers.size(), 0.0);
  auto apply = [&](const Model<T>& mm, std::size_t li, const nn::Planes<T>& x, ForwardCache<T>* c) {
    auto y = detail_unet::apply(mm, li, x, c);
    if (times) {
      const auto now = clock::now();
      times->seconds[li] += std::chrono::duration<double>(now - last).count();
      last = now;
    }
    return y;
  };
  detail::require_dims(input.channels() == m.arch.input_channels,
                       "forward: expected " + std::to_string(m.arch.input_channels) + " input channels, got " +
                           std::to_string(input.channels()));
  detail::require_dims(input.height() % 16 == 0 && input.width() % 16 == 0,
                       "forward: input " + std::to_string(input.height()) + "x" + std::to_string(input.width()) +
                           " is not divisible by 16");
  if (cache) {
    cache->in.assign(m.layers.size(), {});
    cache->out.assign(m.layers.size(), {});
    cache->up_src.clear();
    cache->in_h = input.height();
    cache->in_w = input.width();
  }
  std::size_t li = 0;
  std::array<nn::Planes<T>, 5> e;
  e[0] = apply(m, li++, nn::to_planes(input), cache);
  for (int i = 1; i <= 4; ++i) {
    auto h = apply(m, li++, e[i - 1], cache);
    e[i] = apply(m, li++, h, cache);
  }
  auto d = apply(m, li++, e[4], cache);
  d = apply(m, li++, d, cache);
  for (int i = 4; i >= 1; --i) {
    if (cache) cache->up_src.emplace_back(d.height, d.width);
    auto u = apply(m, li++, nn::upsample2x(d), cache);
    d = apply(m, li++, nn::concat(u, e[i - 1]), cache);
  }
  if (m.arch.extra_upsample_blocks == 1) {
    if (cache) cache->up_src.emplace_back(d.height, d.width);
    auto u = apply(m, li++, nn::upsample2x(d), cache);
    d = apply(m, li++, u, cache);
  }
  return apply(m, li++, d, cache);
}

/// Accumulates parameter gradients into `grads` given dL/d(output planes).
template <class T>
void backward(const Model<T>& m, const ForwardCache<T>& cache, const nn::Planes<T>& grad_out, Model<T>& grads) {
  using detail_unet::apply_back;
  std::size_t li = m.layers.size();
  std::size_t up = cache.up_src.size();
  auto g = apply_back(m, --li, cache, grad_out, grads);
  if (m.arch.extra_upsample_blocks == 1) {
    g = apply_back(m, --li, cache, g, grads);
    g = apply_back(m, --li, cache, g, grads);
    --up;
    g = nn::upsample2x_backward(g, cache.up_src[up].first, cache.up_src[up].second);
  }
  std::array<nn::Planes<T>, 5> ge;
  for (int i = 1; i <= 4; ++i) {
    g = apply_back(m, --li, cache, g, grads);
    const int first = m.layers[li - 1].shape.out;
    auto [gu, gskip] = nn::split_channels(g, first);
    nn::add_inplace(ge[i - 1], gskip);
    g = apply_back(m, --li, cache, gu, grads);
    --up;
    g = nn::upsample2x_backward(g, cache.up_src[up].first, cache.up_src[up].second);
  }
  g = apply_back(m, --li, cache, g, grads);
  g = apply_back(m, --li, cache, g, grads);
  nn::add_inplace(ge[4], g);
  for (int i = 4; i >= 1; --i) {
    g = apply_back(m, --li, cache, ge[i], grads);
    g = apply_back(m, --li, cache, g, grads);
    nn::add_inplace(ge[i - 1], g);
  }
  apply_back(m, --li, cache, ge[0], grads, false);
}

template <class T>
Prediction<T> to_prediction(const nn::Planes<T>& out) {
  auto [rgb, mask] = split_rgbm(nn::from_planes(out));
  return {std::move(rgb), std::move(mask)};
}

/// Gradient planes from image-space gradients on the RGB and mask outputs.
template <class T>
nn::Planes<T> output_gradient(const Image<T>& d_rgb, const Mask<T>& d_mask) {
  nn::Planes<T> g(4, d_rgb.height(), d_rgb.width());
  for (int y = 0; y < d_rgb.height(); ++y)
    for (int x = 0; x < d_rgb.width(); ++x) {
      for (int c = 0; c < 3; ++c) g.at(c, y, x) = d_rgb(y, x, c);
      g.at(3, y, x) = d_mask(y, x);
    }
  return g;
}

template <class T>
Prediction<T> forward(const Model<T>& m, const Image<T>& input) {
  return to_prediction(forward_planes(m, input));
}

/// Both eyes through the same weights.
template <class T>
std::pair<Prediction<T>, Prediction<T>> forward_stereo(const Model<T>& m, const Image<T>& left, const Image<T>& right) {
  return {forward(m, left), forward(m, right)};
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCheckpointFormat = "nrr-checkpoint";

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& m, const nlohmann::json& extra = {}) {
  TensorFile f;
  nlohmann::json meta = {{"format", kCheckpointFormat}, {"version", 1}, {"arch", to_json(m.arch)}};
  if (!extra.is_null()) meta["extra"] = extra;
  f.meta = meta.dump();
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    Tensor w{{static_cast<std::uint64_t>(l.shape.out), static_cast<std::uint64_t>(l.shape.in),
              static_cast<std::uint64_t>(l.shape.kernel), static_cast<std::uint64_t>(l.shape.kernel)},
             std::vector<float>(l.weight.begin(), l.weight.end())};
    Tensor b{{static_cast<std::uint64_t>(l.shape.out)}, std::vector<float>(l.bias.begin(), l.bias.end())};
    f.tensors.emplace(m.names[i] + ".weight", std::move(w));
    f.tensors.emplace(m.names[i] + ".bias", std::move(b));
  }
  save_tensor_file(path, f);
}

struct CheckpointInfo {
  ArchConfig arch;
  nlohmann::json extra;
};

inline CheckpointInfo read_checkpoint_info(const TensorFile& f, const std::filesystem::path& path) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(f.meta);
  } catch (const nlohmann::json::exception&) {
    throw IoError("checkpoint metadata is not JSON: " + path.string());
  }
  if (meta.value("format", "") != kCheckpointFormat) throw IoError("not a model checkpoint: " + path.string());
  if (meta.value("version", 0) != 1) throw IoError("unsupported checkpoint version: " + path.string());
  return {arch_from_json(meta.at("arch")), meta.value("extra", nlohmann::json())};
}

/// Loads a checkpoint, validating every kernel shape against build(). When
/// `expected` is given, the stored architecture must match it.
template <class T = float>
Model<T> load_checkpoint(const std::filesystem::path& path, const ArchConfig* expected = nullptr,
                         CheckpointInfo* info = nullptr) {
  const TensorFile f = load_tensor_file(path);
  const CheckpointInfo ci = read_checkpoint_info(f, path);
  if (expected && !(*expected == ci.arch))
    throw ValidationError("checkpoint architecture (n_init=" + std::to_string(ci.arch.n_init) +
                          ", extra_upsample_blocks=" + std::to_string(ci.arch.extra_upsample_blocks) +
                          ") does not match the requested one (n_init=" + std::to_string(expected->n_init) +
                          ", extra_upsample_blocks=" + std::to_string(expected->extra_upsample_blocks) + ")");
  Model<T> m = build<T>(ci.arch);
  if (f.tensors.size() != 2 * m.layers.size())
    throw IoError("checkpoint has " + std::to_string(f.tensors.size()) + " tensors, expected " +
                  std::to_string(2 * m.layers.size()));
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& l = m.layers[i];
    const auto& w = f.at(m.names[i] + ".weight");
    const auto& b = f.at(m.names[i] + ".bias");
    const std::vector<std::uint64_t> wd = {static_cast<std::uint64_t>(l.shape.out), static_cast<std::uint64_t>(l.shape.in),
                                           static_cast<std::uint64_t>(l.shape.kernel),
                                           static_cast<std::uint64_t>(l.shape.kernel)};
    if (w.dims != wd || b.dims != std::vector<std::uint64_t>{static_cast<std::uint64_t>(l.shape.out)})
      throw IoError("checkpoint kernel shape mismatch for layer " + m.names[i]);
    for (std::size_t k = 0; k < l.weight.size(); ++k) l.weight[k] = static_cast<T>(w.values[k]);
    for (std::size_t k = 0; k < l.bias.size(); ++k) l.bias[k] = static_cast<T>(b.values[k]);
  }
  if (info) *info = ci;
  return m;
}

}  // namespace nrr
