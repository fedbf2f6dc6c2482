#include "efficientad/nets.hpp"

#include <cmath>

#include "efficientad/error.hpp"

namespace ead {
namespace {

ConvSpec conv(int out, int kernel, int padding, Activation act, int stride = 1) {
  ConvSpec s;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = kernel;
  s.stride_h = s.stride_w = stride;
  s.padding = padding;
  s.activation = act;
  return s;
}

constexpr auto kRelu = Activation::relu;
constexpr auto kLinear = Activation::none;

}  // namespace

std::string to_string(Variant v) { return v == Variant::small ? "S" : "M"; }

Variant parse_variant(const std::string& s) {
  if (s == "S" || s == "s" || s == "small") return Variant::small;
  if (s == "M" || s == "m" || s == "medium") return Variant::medium;
  throw ConfigError("unknown variant '" + s + "' (expected S or M)");
}

int ArchConfig::scaled(int channels) const { return channels / width_divisor; }

int ArchConfig::feature_channels() const { return scaled(kFeatureChannels); }

void ArchConfig::validate() const {
  if (width_divisor < 1 || 32 % width_divisor != 0) {
    throw ConfigError("width_divisor must divide 32, got " + std::to_string(width_divisor));
  }
}

std::vector<LayerSpec> pdn_layers(const ArchConfig& arch, Role role) {
  arch.validate();
  const int p1 = arch.padding ? 1 : 0;
  const int p3 = arch.padding ? 3 : 0;
  const int features = arch.feature_channels() * (role == Role::student ? 2 : 1);
  std::vector<LayerSpec> l;
  if (arch.variant == Variant::small) {
    l.push_back(LayerSpec::make_conv("conv1", conv(arch.scaled(128), 4, p3, kRelu)));
    l.push_back(LayerSpec::make_pool("avgpool1", 2, 2, p1));
    l.push_back(LayerSpec::make_conv("conv2", conv(arch.scaled(256), 4, p3, kRelu)));
    l.push_back(LayerSpec::make_pool("avgpool2", 2, 2, p1));
    l.push_back(LayerSpec::make_conv("conv3", conv(arch.scaled(256), 3, p1, kRelu)));
    l.push_back(LayerSpec::make_conv("conv4", conv(features, 4, 0, kLinear)));
  } else {
    l.push_back(LayerSpec::make_conv("conv1", conv(arch.scaled(256), 4, p3, kRelu)));
    l.push_back(LayerSpec::make_pool("avgpool1", 2, 2, p1));
    l.push_back(LayerSpec::make_conv("conv2", conv(arch.scaled(512), 4, p3, kRelu)));
    l.push_back(LayerSpec::make_pool("avgpool2", 2, 2, p1));
    l.push_back(LayerSpec::make_conv("conv3", conv(arch.scaled(512), 1, 0, kRelu)));
    l.push_back(LayerSpec::make_conv("conv4", conv(arch.scaled(512), 3, p1, kRelu)));
    l.push_back(LayerSpec::make_conv("conv5", conv(features, 4, 0, kRelu)));
    l.push_back(LayerSpec::make_conv("conv6", conv(features, 1, 0, kLinear)));
  }
  return l;
}

std::int64_t feature_map_size(const ArchConfig& arch) {
  Network probe;
  probe.layers = pdn_layers(arch, Role::teacher);
  return output_shape(probe, kImageSize, kImageSize)[1];
}

std::vector<LayerSpec> autoencoder_layers(const ArchConfig& arch) {
  arch.validate();
  const int c32 = arch.scaled(32);
  const int c64 = arch.scaled(64);
  std::vector<LayerSpec> l;
  l.push_back(LayerSpec::make_conv("enconv1", conv(c32, 4, 1, kRelu, 2)));
  l.push_back(LayerSpec::make_conv("enconv2", conv(c32, 4, 1, kRelu, 2)));
  l.push_back(LayerSpec::make_conv("enconv3", conv(c64, 4, 1, kRelu, 2)));
  l.push_back(LayerSpec::make_conv("enconv4", conv(c64, 4, 1, kRelu, 2)));
  l.push_back(LayerSpec::make_conv("enconv5", conv(c64, 4, 1, kRelu, 2)));
  l.push_back(LayerSpec::make_conv("enconv6", conv(c64, 8, 0, kLinear)));
  const std::int64_t sizes[] = {3, 8, 15, 32, 63, 127};
  for (int i = 0; i < 6; ++i) {
    const std::string k = std::to_string(i + 1);
    l.push_back(LayerSpec::make_resize("bilinear" + k, sizes[i], sizes[i]));
    l.push_back(LayerSpec::make_conv("deconv" + k, conv(c64, 4, 2, kRelu)));
    l.push_back(LayerSpec::make_dropout("dropout" + k, 0.2f));
  }
  const std::int64_t out = feature_map_size(arch);
  l.push_back(LayerSpec::make_resize("bilinear7", out, out));
  l.push_back(LayerSpec::make_conv("deconv7", conv(c64, 3, 1, kRelu)));
  l.push_back(LayerSpec::make_conv("deconv8", conv(arch.feature_channels(), 3, 1, kLinear)));
  return l;
}

void init_params(Network& net, Rng& rng) {
  net.params.clear();
  int in = net.in_channels;
  for (const auto& layer : net.layers) {
    if (layer.kind != LayerKind::conv) continue;
    const ConvSpec& s = layer.conv;
    const std::int64_t fan_in = static_cast<std::int64_t>(in) * s.kernel_h * s.kernel_w;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    ConvParams p{Tensor({s.out_channels, in, s.kernel_h, s.kernel_w}), Tensor({s.out_channels})};
    for (float& w : p.weight.values()) w = static_cast<float>(rng.uniform(-bound, bound));
    for (float& b : p.bias.values()) b = static_cast<float>(rng.uniform(-bound, bound));
    net.params.push_back(std::move(p));
    in = s.out_channels;
  }
}

Network make_pdn(const ArchConfig& arch, Role role, Rng& rng) {
  Network net;
  net.name = std::string(role == Role::teacher ? "teacher" : "student") + "-" +
             to_string(arch.variant);
  net.in_channels = 3;
  net.layers = pdn_layers(arch, role);
  init_params(net, rng);
  return net;
}

Network make_autoencoder(const ArchConfig& arch, Rng& rng) {
  Network net;
  net.name = "autoencoder";
  net.in_channels = 3;
  net.layers = autoencoder_layers(arch);
  init_params(net, rng);
  return net;
}

Tensor autoencoder_forward(const Network& autoencoder, const Tensor& image, bool training,
                           Rng& rng, Tape* tape) {
  require_chw(image, "autoencoder input");
  if (image.channels() != 3 || image.height() != kImageSize || image.width() != kImageSize) {
    throw ShapeError("autoencoder input must be 3x256x256, got " + image.shape_string());
  }
  return forward(autoencoder, image, training, rng, tape);
}

ChannelNorm channel_norm_from_features(std::span<const Tensor> features) {
  if (features.empty()) throw ConfigError("channel normalization needs at least one feature map");
  const std::int64_t c_n = features.front().channels();
  std::vector<double> sum(static_cast<std::size_t>(c_n), 0.0);
  std::vector<double> count(static_cast<std::size_t>(c_n), 0.0);
  for (const Tensor& f : features) {
    require_chw(f, "channel norm features");
    if (f.channels() != c_n) throw ShapeError("channel norm: feature maps differ in channels");
    for (std::int64_t c = 0; c < c_n; ++c) {
      for (float v : f.channel(c)) sum[static_cast<std::size_t>(c)] += v;
      count[static_cast<std::size_t>(c)] += static_cast<double>(f.height() * f.width());
    }
  }
  ChannelNorm norm;
  norm.mean.resize(static_cast<std::size_t>(c_n));
  norm.stddev.resize(static_cast<std::size_t>(c_n));
  std::vector<double> sq(static_cast<std::size_t>(c_n), 0.0);
  for (std::size_t c = 0; c < sum.size(); ++c) sum[c] /= count[c];
  for (const Tensor& f : features) {
    for (std::int64_t c = 0; c < c_n; ++c) {
      const double mu = sum[static_cast<std::size_t>(c)];
      for (float v : f.channel(c)) sq[static_cast<std::size_t>(c)] += (v - mu) * (v - mu);
    }
  }
  for (std::size_t c = 0; c < sum.size(); ++c) {
    norm.mean[c] = static_cast<float>(sum[c]);
    norm.stddev[c] = std::max(static_cast<float>(std::sqrt(sq[c] / count[c])), kStddevFloor);
  }
  return norm;
}

ChannelNorm fit_channel_norm(const Network& teacher, std::span<const Tensor> images) {
  if (images.empty()) throw ConfigError("fit_channel_norm: empty image set");
  std::vector<Tensor> outputs;
  outputs.reserve(images.size());
  for (const Tensor& img : images) outputs.push_back(forward(teacher, img));
  return channel_norm_from_features(outputs);
}

Tensor normalize_channels(const Tensor& features, const ChannelNorm& norm) {
  require_chw(features, "normalize_channels");
  if (features.channels() != static_cast<std::int64_t>(norm.channels())) {
    throw ShapeError("normalize_channels: features have " +
                     std::to_string(features.channels()) + " channels, norm has " +
                     std::to_string(norm.channels()));
  }
  Tensor out = features;
  for (std::int64_t c = 0; c < out.channels(); ++c) {
    const float mu = norm.mean[static_cast<std::size_t>(c)];
    const float inv = 1.0f / norm.stddev[static_cast<std::size_t>(c)];
    for (float& v : out.channel(c)) v = (v - mu) * inv;
  }
  return out;
}

Tensor denormalize_channels(const Tensor& features, const ChannelNorm& norm) {
  require_chw(features, "denormalize_channels");
  if (features.channels() != static_cast<std::int64_t>(norm.channels())) {
    throw ShapeError("denormalize_channels: channel count mismatch");
  }
  Tensor out = features;
  for (std::int64_t c = 0; c < out.channels(); ++c) {
    const float mu = norm.mean[static_cast<std::size_t>(c)];
    const float sd = norm.stddev[static_cast<std::size_t>(c)];
    for (float& v : out.channel(c)) v = v * sd + mu;
  }
  return out;
}

}  // namespace ead
