#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efficientad/distill.hpp"
#include "efficientad/network.hpp"
#include "efficientad/rng.hpp"
#include "efficientad/tensor.hpp"

namespace ead {

// Scene generator for desk-scale runs: four fixed objects (disc, square,
// triangle, ring) on a textured background, with small position, size and color
// jitter. Structural anomalies add a blob; layout anomalies move one object.
struct SyntheticConfig {
  int normal_train = 48;
  int normal_test = 16;
  int structural = 20;
  int layout = 10;
  int natural = 32;  // unrelated images for the penalty / distillation corpus
  std::int64_t size = 256;
  double jitter_px = 3.0;
  std::uint64_t seed = 2024;
};

struct SyntheticImage {
  Tensor rgb;   // 3 x size x size in [0, 1]
  Tensor mask;  // 1 x size x size, {0, 1}
  std::string defect_type;  // "good", "structural" or "layout"
};

struct SyntheticDataset {
  std::vector<Tensor> train;
  std::vector<SyntheticImage> test;
  std::vector<Tensor> natural;
};

SyntheticImage make_scene(Rng& rng, const SyntheticConfig& config, const std::string& defect);
Tensor make_natural_image(Rng& rng, std::int64_t size);
SyntheticDataset make_synthetic_dataset(const SyntheticConfig& config);

// Writes <root>/train/good, <root>/test/<type>, <root>/ground_truth/<type> and
// <root>/natural as PNG files.
void write_synthetic_dataset(const SyntheticDataset& data, const std::string& root);

// Distillation pairs whose targets come from a fixed reference network that
// stands in for the pretrained backbone. Gray targets are included.
std::vector<DistillSample> reference_samples(const Network& reference,
                                             const std::vector<Tensor>& images);

}  // namespace ead
