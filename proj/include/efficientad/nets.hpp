#pragma once

#include <span>
#include <string>
#include <vector>

#include "efficientad/network.hpp"
#include "efficientad/rng.hpp"
#include "efficientad/tensor.hpp"

namespace ead {

inline constexpr std::int64_t kImageSize = 256;
inline constexpr int kFeatureChannels = 384;

enum class Variant { small, medium };
enum class Role { teacher, student };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

// Architecture selection. `width_divisor` scales every channel count
// (including the 384 feature channels) down for desk-scale runs; 1 gives the
// published widths.
struct ArchConfig {
  Variant variant = Variant::small;
  bool padding = true;
  int width_divisor = 1;

  int feature_channels() const;
  int scaled(int channels) const;
  void validate() const;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

// Layer lists without parameters.
std::vector<LayerSpec> pdn_layers(const ArchConfig& arch, Role role);
std::vector<LayerSpec> autoencoder_layers(const ArchConfig& arch);

// Spatial side of the PDN output for a kImageSize input (64, or 56 without padding).
std::int64_t feature_map_size(const ArchConfig& arch);

// Builds a network and draws its parameters: weights and biases ~ U(-b, b)
// with b = 1 / sqrt(fan_in).
Network make_pdn(const ArchConfig& arch, Role role, Rng& rng);
Network make_autoencoder(const ArchConfig& arch, Rng& rng);
void init_params(Network& net, Rng& rng);

// Autoencoder forward with its fixed 3 x 256 x 256 input contract enforced.
Tensor autoencoder_forward(const Network& autoencoder, const Tensor& image, bool training,
                           Rng& rng, Tape* tape = nullptr);

// Per-channel standardization statistics of teacher (or backbone) features.
struct ChannelNorm {
  std::vector<float> mean;
  std::vector<float> stddev;

  std::size_t channels() const { return mean.size(); }
  friend bool operator==(const ChannelNorm&, const ChannelNorm&) = default;
};

inline constexpr float kStddevFloor = 1e-6f;

// Pooled mean and population stddev of every spatial element of each channel
// across all feature maps; stddev floored at kStddevFloor.
ChannelNorm channel_norm_from_features(std::span<const Tensor> features);

// Runs the frozen teacher over `images` (standardized) and pools its outputs.
ChannelNorm fit_channel_norm(const Network& teacher, std::span<const Tensor> images);

// (x_c - mean_c) / stddev_c, and its inverse.
Tensor normalize_channels(const Tensor& features, const ChannelNorm& norm);
Tensor denormalize_channels(const Tensor& features, const ChannelNorm& norm);

}  // namespace ead
