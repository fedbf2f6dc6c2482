#include "efficientad/network.hpp"

#include <string>

#include "efficientad/error.hpp"

namespace ead {

LayerSpec LayerSpec::make_conv(std::string name, ConvSpec spec) {
  spec.validate();
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::conv;
  l.conv = spec;
  return l;
}

LayerSpec LayerSpec::make_pool(std::string name, int kernel, int stride, int padding) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::avg_pool;
  l.pool_kernel = kernel;
  l.pool_stride = stride;
  l.pool_padding = padding;
  return l;
}

LayerSpec LayerSpec::make_resize(std::string name, std::int64_t h, std::int64_t w) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::resize;
  l.resize_h = h;
  l.resize_w = w;
  return l;
}

LayerSpec LayerSpec::make_dropout(std::string name, float rate) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::dropout;
  l.dropout_rate = rate;
  return l;
}

int Network::out_channels() const {
  int c = in_channels;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::conv) c = l.conv.out_channels;
  }
  return c;
}

std::int64_t Network::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.weight.size() + p.bias.size();
  return n;
}

std::vector<Tensor*> Network::parameter_tensors() {
  std::vector<Tensor*> out;
  for (auto& p : params) {
    out.push_back(&p.weight);
    out.push_back(&p.bias);
  }
  return out;
}

std::vector<const Tensor*> Network::parameter_tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& p : params) {
    out.push_back(&p.weight);
    out.push_back(&p.bias);
  }
  return out;
}

NetworkGrads NetworkGrads::zeros_like(const Network& net) {
  NetworkGrads g;
  for (const auto& p : net.params) {
    g.params.push_back({Tensor::zeros_like(p.weight), Tensor::zeros_like(p.bias)});
  }
  return g;
}

std::vector<const Tensor*> NetworkGrads::tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& p : params) {
    out.push_back(&p.weight);
    out.push_back(&p.bias);
  }
  return out;
}

void NetworkGrads::add(const NetworkGrads& other) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::int64_t i = 0; i < params[k].weight.size(); ++i) {
      params[k].weight[i] += other.params[k].weight[i];
    }
    for (std::int64_t i = 0; i < params[k].bias.size(); ++i) {
      params[k].bias[i] += other.params[k].bias[i];
    }
  }
}

std::vector<std::int64_t> output_shape(const Network& net, std::int64_t h, std::int64_t w) {
  std::int64_t c = net.in_channels;
  for (const auto& l : net.layers) {
    switch (l.kind) {
      case LayerKind::conv:
        h = conv_output_extent(h, l.conv.kernel_h, l.conv.stride_h, l.conv.padding, "height");
        w = conv_output_extent(w, l.conv.kernel_w, l.conv.stride_w, l.conv.padding, "width");
        c = l.conv.out_channels;
        break;
      case LayerKind::avg_pool:
        h = conv_output_extent(h, l.pool_kernel, l.pool_stride, l.pool_padding, "height");
        w = conv_output_extent(w, l.pool_kernel, l.pool_stride, l.pool_padding, "width");
        break;
      case LayerKind::resize:
        h = l.resize_h;
        w = l.resize_w;
        break;
      case LayerKind::dropout:
        break;
    }
  }
  return {c, h, w};
}

Tensor forward(const Network& net, const Tensor& input, bool training, Rng& rng, Tape* tape) {
  require_chw(input, net.name.c_str());
  if (input.channels() != net.in_channels) {
    throw ShapeError(net.name + ": expected " + std::to_string(net.in_channels) +
                     " input channels, got " + std::to_string(input.channels()));
  }
  if (tape) {
    tape->inputs.assign(net.layers.size(), Tensor());
    tape->outputs.assign(net.layers.size(), Tensor());
    tape->masks.assign(net.layers.size(), Tensor());
  }
  Tensor x = input;
  std::size_t conv_index = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    if (tape) tape->inputs[i] = x;
    switch (l.kind) {
      case LayerKind::conv: {
        const ConvParams& p = net.params.at(conv_index++);
        x = conv2d(x, p.weight, p.bias, l.conv);
        if (l.conv.activation == Activation::relu) x = relu(x);
        if (tape) tape->outputs[i] = x;
        break;
      }
      case LayerKind::avg_pool:
        x = avgpool2d(x, l.pool_kernel, l.pool_stride, l.pool_padding);
        break;
      case LayerKind::resize:
        x = bilinear_resize(x, l.resize_h, l.resize_w);
        break;
      case LayerKind::dropout:
        x = dropout(x, l.dropout_rate, training, rng, tape ? &tape->masks[i] : nullptr);
        break;
    }
  }
  return x;
}

Tensor forward(const Network& net, const Tensor& input) {
  Rng unused(0);
  return forward(net, input, false, unused, nullptr);
}

Tensor backward(const Network& net, const Tape& tape, const Tensor& grad_output,
                NetworkGrads& grads, bool need_input_grad) {
  if (tape.inputs.size() != net.layers.size()) {
    throw ConfigError(net.name + ": backward called without a matching forward tape");
  }
  Tensor g = grad_output;
  std::size_t conv_index = net.params.size();
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const LayerSpec& l = net.layers[k];
    const Tensor& in = tape.inputs[k];
    switch (l.kind) {
      case LayerKind::conv: {
        --conv_index;
        if (l.conv.activation == Activation::relu) g = relu_backward(tape.outputs[k], g);
        const bool input_grad = need_input_grad || k > 0;
        Conv2dGrads cg = conv2d_backward(in, net.params[conv_index].weight, g, l.conv,
                                         input_grad);
        ConvParams& acc = grads.params.at(conv_index);
        for (std::int64_t i = 0; i < acc.weight.size(); ++i) acc.weight[i] += cg.weights[i];
        for (std::int64_t i = 0; i < acc.bias.size(); ++i) acc.bias[i] += cg.bias[i];
        g = std::move(cg.input);
        break;
      }
      case LayerKind::avg_pool:
        g = avgpool2d_backward(g, in.height(), in.width(), l.pool_kernel, l.pool_stride,
                               l.pool_padding);
        break;
      case LayerKind::resize:
        g = bilinear_resize_backward(g, in.height(), in.width());
        break;
      case LayerKind::dropout:
        g = dropout_backward(tape.masks[k], g);
        break;
    }
    if (g.empty()) break;
  }
  return need_input_grad ? g : Tensor();
}

}  // namespace ead
