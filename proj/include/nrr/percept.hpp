#pragma once

// Frozen five-stage convolutional feature extractor for perceptual losses.
//
// Stage s (s = 0..4) is a 2x2 max-pool (skipped for s = 0) followed by
// convs_per_stage[s] 3x3 convolutions with ReLU. The tap is the ReLU output
// of the last convolution, so stage s has spatial size input / 2^s (ceil).
//
// Profiles:
//   test   small random pyramid keyed by an integer seed
//   vgg16  VGG16 layout; weights loaded from a tensor file with entries
//          "stage<s>.conv<k>.weight" (out x in x 3 x 3) and "...bias"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "nrr/errors.hpp"
#include "nrr/image.hpp"
#include "nrr/nn.hpp"
#include "nrr/rng.hpp"
#include "nrr/tensor_file.hpp"

namespace nrr {

constexpr int kFeatureStages = 5;

struct PerceptConfig {
  std::string profile = "test";
  std::array<int, kFeatureStages> widths = {16, 32, 64, 64, 64};
  std::array<int, kFeatureStages> convs_per_stage = {1, 1, 1, 1, 1};
  std::uint64_t seed = 1234;
  std::string weights_path;  // vgg16 profile only
  std::array<double, 3> mean = {0.485, 0.456, 0.406};
  std::array<double, 3> stddev = {0.229, 0.224, 0.225};

  static PerceptConfig vgg16(std::string weights) {
    PerceptConfig c;
    c.profile = "vgg16";
    c.widths = {64, 128, 256, 512, 512};
    c.convs_per_stage = {2, 2, 3, 3, 3};
    c.weights_path = std::move(weights);
    return c;
  }

  void validate() const {
    detail::require(profile == "test" || profile == "vgg16", "percept.profile must be 'test' or 'vgg16'");
    for (int s = 0; s < kFeatureStages; ++s) {
      detail::require(widths[s] >= 1, "percept widths must be positive");
      detail::require(convs_per_stage[s] >= 1, "percept convs per stage must be >= 1");
    }
    for (double v : stddev) detail::require(v > 0.0, "percept.stddev must be positive");
    if (profile == "vgg16") detail::require(!weights_path.empty(), "percept.weights is required for the vgg16 profile");
  }
};

template <class T>
using FeatureStack = std::array<nn::Planes<T>, kFeatureStages>;

template <class T>
class FeatureExtractor {
 public:
  /// Intermediate activations kept for the backward pass.
  struct Cache {
    int in_h = 0, in_w = 0;
    std::vector<nn::Planes<T>> conv_inputs;   // one per conv, in order
    std::vector<nn::Planes<T>> conv_outputs;  // post-ReLU
    std::array<std::vector<std::uint32_t>, kFeatureStages> argmax;
    std::array<std::pair<int, int>, kFeatureStages> pool_in{};  // pre-pool extents
  };

  FeatureExtractor() : FeatureExtractor(PerceptConfig{}) {}

  explicit FeatureExtractor(const PerceptConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    int in = 3;
    for (int s = 0; s < kFeatureStages; ++s)
      for (int k = 0; k < cfg_.convs_per_stage[s]; ++k) {
        nn::ConvParam<T> p(nn::ConvShape{in, cfg_.widths[s], 3, 1, 1});
        auto rng = make_rng({cfg_.seed, 0xFEA7ULL, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(k)});
        p.init_he(rng);
        layers_.push_back(std::move(p));
        in = cfg_.widths[s];
      }
    if (cfg_.profile == "vgg16") load(cfg_.weights_path);
  }

  const PerceptConfig& config() const { return cfg_; }
  std::size_t layer_count() const { return layers_.size(); }
  int stage_channels(int s) const { return cfg_.widths[s]; }

  static std::string layer_name(int stage, int conv) {
    return "stage" + std::to_string(stage) + ".conv" + std::to_string(conv);
  }

  FeatureStack<T> extract(const Image<T>& image) const {
    return run(image, nullptr);
  }

  FeatureStack<T> extract(const Image<T>& image, Cache& cache) const { return run(image, &cache); }

  /// Gradient with respect to the input image given gradients on each stage
  /// output. Stages whose gradient is empty contribute nothing.
  Image<T> backward(const Cache& cache, const FeatureStack<T>& grads) const {
    nn::Planes<T> g;
    std::size_t li = layers_.size();
    for (int s = kFeatureStages - 1; s >= 0; --s) {
      if (!grads[s].data.empty()) nn::add_inplace(g, grads[s]);
      for (int k = cfg_.convs_per_stage[s] - 1; k >= 0; --k) {
        --li;
        if (g.data.empty()) continue;
        nn::relu_backward_inplace(cache.conv_outputs[li], g);
        g = nn::conv2d_backward_input(layers_[li], g, cache.conv_inputs[li].height, cache.conv_inputs[li].width);
      }
      if (s > 0 && !g.data.empty())
        g = nn::maxpool2_backward(g, cache.argmax[s], cache.pool_in[s].first, cache.pool_in[s].second);
    }
    Image<T> out(cache.in_h, cache.in_w, 3);
    if (g.data.empty()) return out;
    for (int c = 0; c < 3; ++c) {
      const T inv = static_cast<T>(1.0 / cfg_.stddev[c]);
      for (int y = 0; y < cache.in_h; ++y)
        for (int x = 0; x < cache.in_w; ++x) out(y, x, c) = g.at(c, y, x) * inv;
    }
    return out;
  }

  /// Hash over every weight and bias; frozen extractors never change it.
  std::uint64_t parameter_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : layers_) {
      h = nn::hash_values(std::span<const T>(p.weight), h);
      h = nn::hash_values(std::span<const T>(p.bias), h);
    }
    return h;
  }

  /// Replaces every layer from a tensor file, validating shapes.
  void load(const std::filesystem::path& path) {
    const TensorFile f = load_tensor_file(path);
    std::size_t li = 0;
    for (int s = 0; s < kFeatureStages; ++s)
      for (int k = 0; k < cfg_.convs_per_stage[s]; ++k, ++li) {
        auto& p = layers_[li];
        const auto& w = f.at(layer_name(s, k) + ".weight");
        const auto& b = f.at(layer_name(s, k) + ".bias");
        const std::vector<std::uint64_t> want = {static_cast<std::uint64_t>(p.shape.out),
                                                 static_cast<std::uint64_t>(p.shape.in), 3, 3};
        if (w.dims != want || b.dims != std::vector<std::uint64_t>{static_cast<std::uint64_t>(p.shape.out)})
          throw IoError("extractor weight shape mismatch for " + layer_name(s, k));
        for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight[i] = static_cast<T>(w.values[i]);
        for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] = static_cast<T>(b.values[i]);
      }
  }

 private:
  FeatureStack<T> run(const Image<T>& image, Cache* cache) const {
    detail::require_dims(image.channels() == 3, "extract: expected a 3-channel image, got " +
                                                    std::to_string(image.channels()));
    nn::Planes<T> x = nn::to_planes(image);
    for (int c = 0; c < 3; ++c) {
      const T m = static_cast<T>(cfg_.mean[c]), inv = static_cast<T>(1.0 / cfg_.stddev[c]);
      T* p = x.plane(c);
      for (std::size_t i = 0; i < x.plane_size(); ++i) p[i] = (p[i] - m) * inv;
    }
    if (cache) {
      cache->in_h = image.height();
      cache->in_w = image.width();
      cache->conv_inputs.clear();
      cache->conv_outputs.clear();
    }
    FeatureStack<T> out;
    std::size_t li = 0;
    for (int s = 0; s < kFeatureStages; ++s) {
      if (s > 0) {
        if (cache) cache->pool_in[s] = {x.height, x.width};
        x = nn::maxpool2(x, cache ? &cache->argmax[s] : nullptr);
      }
      for (int k = 0; k < cfg_.convs_per_stage[s]; ++k, ++li) {
        if (cache) cache->conv_inputs.push_back(x);
        x = nn::conv2d(x, layers_[li]);
        nn::relu_inplace(x);
        if (cache) cache->conv_outputs.push_back(x);
      }
      out[s] = x;
    }
    return out;
  }

  PerceptConfig cfg_;
  std::vector<nn::ConvParam<T>> layers_;
};

}  // namespace nrr
