#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "efficientad/tensor.hpp"

namespace ead {

// Image-level ROC area with ties sharing one threshold step, i.e. the
// tie-corrected Mann-Whitney statistic. Throws ConfigError on single-class input.
double auroc(std::span<const float> scores, std::span<const std::uint8_t> labels);

// Average precision: sum over descending thresholds of (R_k - R_{k-1}) * P_k.
double auprc(std::span<const float> scores, std::span<const std::uint8_t> labels);

// 8-connected components of a binary mask (H x W or 1 x H x W, nonzero is
// foreground). Labels follow first-encounter raster order; each region lists
// its flat pixel indices in ascending order.
struct RegionSet {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::int32_t> labels;  // -1 background, else region index
  std::vector<std::vector<std::int64_t>> regions;
};

RegionSet connected_components(const Tensor& mask);

enum class CurveMode { exact, binned };

struct CurveOptions {
  CurveMode mode = CurveMode::exact;
  int bins = 1000;  // binned mode: equal-width bins over [min, max] of the pooled scores
};

// Per-region overlap vs. pooled false positive rate, integrated by trapezoid
// up to fpr_limit and divided by fpr_limit. Masks of normal images may be
// all-zero tensors.
double aupro(std::span<const Tensor> maps, std::span<const Tensor> masks, double fpr_limit = 0.3,
             const CurveOptions& options = {});

// Pooled-pixel ROC area up to fpr_limit, divided by fpr_limit.
double pixel_auroc(std::span<const Tensor> maps, std::span<const Tensor> masks,
                   double fpr_limit = 0.05, const CurveOptions& options = {});

struct EvalImage {
  std::string name;
  std::string defect_type = "good";
  bool anomalous = false;
  float score = 0.0f;
  std::optional<Tensor> map;   // 1 x H x W
  std::optional<Tensor> mask;  // 1 x H x W, absent means all-zero
};

struct EvalSet {
  std::vector<EvalImage> images;
};

struct EvalOptions {
  double pro_limit = 0.3;
  double pro_limit_strict = 0.05;
  double pixel_limit = 0.05;
  CurveOptions curve;
};

struct EvalReport {
  std::size_t normal_images = 0;
  std::size_t anomalous_images = 0;
  double image_auroc = 0.0;
  double image_auprc = 0.0;
  // Each anomaly type against all normal images.
  std::map<std::string, double> auroc_by_type;
  // Pixel metrics; absent when maps are missing or there are no regions.
  std::optional<double> aupro;
  std::optional<double> aupro_strict;
  std::optional<double> pixel_auroc;
};

EvalReport evaluate(const EvalSet& set, const EvalOptions& options = {});

// JSON document with the metric values, options and per-image scores. No
// timestamps, so identical inputs give identical bytes.
std::string eval_report_json(const EvalReport& report, const EvalSet& set,
                             const EvalOptions& options);

}  // namespace ead
