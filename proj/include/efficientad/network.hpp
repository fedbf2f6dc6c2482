#pragma once

#include <string>
#include <vector>

#include "efficientad/ops.hpp"
#include "efficientad/rng.hpp"
#include "efficientad/tensor.hpp"

namespace ead {

enum class LayerKind { conv, avg_pool, resize, dropout };

// One entry of a static layer list. Only the fields for `kind` are meaningful.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  ConvSpec conv;             // conv
  int pool_kernel = 2;       // avg_pool
  int pool_stride = 2;
  int pool_padding = 0;
  std::int64_t resize_h = 1;  // resize
  std::int64_t resize_w = 1;
  float dropout_rate = 0.0f;  // dropout

  static LayerSpec make_conv(std::string name, ConvSpec spec);
  static LayerSpec make_pool(std::string name, int kernel, int stride, int padding);
  static LayerSpec make_resize(std::string name, std::int64_t h, std::int64_t w);
  static LayerSpec make_dropout(std::string name, float rate);
};

struct ConvParams {
  Tensor weight;  // O x I x Kh x Kw
  Tensor bias;    // O
};

// A feed-forward stack of layers interpreted by one forward/backward routine.
// `params` holds one entry per conv layer, in layer order.
struct Network {
  std::string name;
  int in_channels = 3;
  std::vector<LayerSpec> layers;
  std::vector<ConvParams> params;

  int out_channels() const;
  std::int64_t parameter_count() const;

  // Pointers to every weight and bias, in a stable order.
  std::vector<Tensor*> parameter_tensors();
  std::vector<const Tensor*> parameter_tensors() const;
};

// Per-layer values recorded during a training-mode forward pass.
struct Tape {
  std::vector<Tensor> inputs;   // input of layer i
  std::vector<Tensor> outputs;  // post-activation output of conv layers
  std::vector<Tensor> masks;    // dropout scales
};

// Gradients shaped like Network::params.
struct NetworkGrads {
  std::vector<ConvParams> params;

  static NetworkGrads zeros_like(const Network& net);
  std::vector<const Tensor*> tensors() const;
  void add(const NetworkGrads& other);
};

// Shape of the output for a C x H x W input, without running the network.
std::vector<std::int64_t> output_shape(const Network& net, std::int64_t h, std::int64_t w);

// Runs the layer list. Dropout is active only when `training` is set; `tape`,
// when given, records what backward() needs.
Tensor forward(const Network& net, const Tensor& input, bool training, Rng& rng,
               Tape* tape = nullptr);

// Inference-mode forward (dropout off, no tape).
Tensor forward(const Network& net, const Tensor& input);

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output). Returns
// d(loss)/d(input) when `need_input_grad` is set, an empty tensor otherwise.
Tensor backward(const Network& net, const Tape& tape, const Tensor& grad_output,
                NetworkGrads& grads, bool need_input_grad = false);

}  // namespace ead
