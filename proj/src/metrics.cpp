#include "efficientad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "efficientad/error.hpp"

namespace ead {
namespace {

// One pooled sample on a curve: its score and how much it moves each axis.
struct CurveSample {
  float score;
  double x_weight;  // false positive share
  double y_weight;  // true positive (or region overlap) share
};

struct CurvePoint {
  double x;
  double y;
};

// Thresholds sweep from +inf down through every distinct score; ties form one step.
std::vector<CurvePoint> sweep(std::vector<CurveSample>& samples) {
  std::sort(samples.begin(), samples.end(),
            [](const CurveSample& a, const CurveSample& b) { return a.score > b.score; });
  std::vector<CurvePoint> pts{{0.0, 0.0}};
  double x = 0.0;
  double y = 0.0;
  std::size_t i = 0;
  while (i < samples.size()) {
    const float s = samples[i].score;
    while (i < samples.size() && samples[i].score == s) {
      x += samples[i].x_weight;
      y += samples[i].y_weight;
      ++i;
    }
    pts.push_back({x, y});
  }
  // Remove accumulated rounding at the -inf end.
  pts.back() = {1.0, 1.0};
  return pts;
}

double partial_area(const std::vector<CurvePoint>& pts, double limit) {
  double area = 0.0;
  for (std::size_t k = 1; k < pts.size(); ++k) {
    const CurvePoint a = pts[k - 1];
    const CurvePoint b = pts[k];
    if (a.x >= limit) break;
    if (b.x <= limit) {
      area += (b.x - a.x) * (a.y + b.y) * 0.5;
    } else {
      const double y_lim = a.y + (b.y - a.y) * (limit - a.x) / (b.x - a.x);
      area += (limit - a.x) * (a.y + y_lim) * 0.5;
      break;
    }
  }
  return area / limit;
}

void check_limit(double limit) {
  if (!(limit > 0.0 && limit <= 1.0)) {
    throw ConfigError("fpr_limit must be in (0, 1], got " + std::to_string(limit));
  }
}

void check_labels(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("scores and labels differ in length (" + std::to_string(scores.size()) +
                     " vs " + std::to_string(labels.size()) + ")");
  }
}

// Replaces scores by their bin index; order-preserving (non-strictly).
void quantize(std::vector<CurveSample>& samples, int bins) {
  if (bins < 1) throw ConfigError("bins must be >= 1");
  if (samples.empty()) return;
  auto [lo_it, hi_it] = std::minmax_element(
      samples.begin(), samples.end(),
      [](const CurveSample& a, const CurveSample& b) { return a.score < b.score; });
  const double lo = lo_it->score;
  const double span = static_cast<double>(hi_it->score) - lo;
  for (CurveSample& s : samples) {
    if (span <= 0.0) {
      s.score = 0.0f;
      continue;
    }
    const auto b = static_cast<int>(std::floor((s.score - lo) / span * bins));
    s.score = static_cast<float>(std::clamp(b, 0, bins - 1));
  }
}

const Tensor& check_map(const Tensor& t, const char* what) {
  if (t.rank() != 2 && !(t.rank() == 3 && t.dim(0) == 1)) {
    throw ShapeError(std::string(what) + " must be H x W or 1 x H x W, got " + t.shape_string());
  }
  return t;
}

std::pair<std::int64_t, std::int64_t> map_hw(const Tensor& t) {
  return t.rank() == 2 ? std::pair{t.dim(0), t.dim(1)} : std::pair{t.dim(1), t.dim(2)};
}

void check_pairs(std::span<const Tensor> maps, std::span<const Tensor> masks) {
  if (maps.size() != masks.size()) throw ShapeError("maps and masks differ in count");
  for (std::size_t i = 0; i < maps.size(); ++i) {
    check_map(maps[i], "anomaly map");
    check_map(masks[i], "mask");
    if (map_hw(maps[i]) != map_hw(masks[i])) {
      throw ShapeError("map " + maps[i].shape_string() + " and mask " + masks[i].shape_string() +
                       " differ in size (image " + std::to_string(i) + ")");
    }
  }
}

}  // namespace

double auroc(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  check_labels(scores, labels);
  const auto pos = static_cast<std::size_t>(std::count_if(
      labels.begin(), labels.end(), [](std::uint8_t l) { return l != 0; }));
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ConfigError("auroc needs both normal and anomalous samples");
  std::vector<CurveSample> samples;
  samples.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool p = labels[i] != 0;
    samples.push_back({scores[i], p ? 0.0 : 1.0 / neg, p ? 1.0 / pos : 0.0});
  }
  auto pts = sweep(samples);
  return partial_area(pts, 1.0);
}

double auprc(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  check_labels(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto pos = static_cast<double>(std::count_if(
      labels.begin(), labels.end(), [](std::uint8_t l) { return l != 0; }));
  if (pos == 0.0) throw ConfigError("auprc needs at least one anomalous sample");
  double tp = 0.0;
  double fp = 0.0;
  double ap = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const float s = scores[order[i]];
    double group_tp = 0.0;
    while (i < order.size() && scores[order[i]] == s) {
      if (labels[order[i]]) {
        group_tp += 1.0;
      } else {
        fp += 1.0;
      }
      ++i;
    }
    tp += group_tp;
    if (group_tp > 0.0) ap += (group_tp / pos) * (tp / (tp + fp));
  }
  return ap;
}

RegionSet connected_components(const Tensor& mask) {
  check_map(mask, "mask");
  RegionSet rs;
  std::tie(rs.height, rs.width) = map_hw(mask);
  const std::int64_t h = rs.height;
  const std::int64_t w = rs.width;
  rs.labels.assign(static_cast<std::size_t>(h * w), -1);
  std::vector<std::int64_t> stack;
  for (std::int64_t start = 0; start < h * w; ++start) {
    if (mask[start] == 0.0f || rs.labels[static_cast<std::size_t>(start)] >= 0) continue;
    const auto label = static_cast<std::int32_t>(rs.regions.size());
    std::vector<std::int64_t> region;
    stack.assign(1, start);
    rs.labels[static_cast<std::size_t>(start)] = label;
    while (!stack.empty()) {
      const std::int64_t p = stack.back();
      stack.pop_back();
      region.push_back(p);
      const std::int64_t y = p / w;
      const std::int64_t x = p % w;
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          const std::int64_t ny = y + dy;
          const std::int64_t nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const std::int64_t q = ny * w + nx;
          if (mask[q] == 0.0f || rs.labels[static_cast<std::size_t>(q)] >= 0) continue;
          rs.labels[static_cast<std::size_t>(q)] = label;
          stack.push_back(q);
        }
      }
    }
    std::sort(region.begin(), region.end());
    rs.regions.push_back(std::move(region));
  }
  return rs;
}

double aupro(std::span<const Tensor> maps, std::span<const Tensor> masks, double fpr_limit,
             const CurveOptions& options) {
  check_limit(fpr_limit);
  check_pairs(maps, masks);
  std::vector<RegionSet> comps;
  std::size_t regions = 0;
  std::size_t negatives = 0;
  for (const Tensor& m : masks) {
    comps.push_back(connected_components(m));
    regions += comps.back().regions.size();
    for (float v : m.values()) negatives += v == 0.0f ? 1 : 0;
  }
  if (regions == 0) throw ConfigError("aupro needs at least one anomalous region");
  if (negatives == 0) throw ConfigError("aupro needs at least one normal pixel");
  std::vector<CurveSample> samples;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const RegionSet& rs = comps[i];
    for (std::int64_t p = 0; p < maps[i].size(); ++p) {
      const std::int32_t label = rs.labels[static_cast<std::size_t>(p)];
      if (label < 0) {
        samples.push_back({maps[i][p], 1.0 / static_cast<double>(negatives), 0.0});
      } else {
        const double area = static_cast<double>(rs.regions[static_cast<std::size_t>(label)].size());
        samples.push_back({maps[i][p], 0.0, 1.0 / (area * static_cast<double>(regions))});
      }
    }
  }
  if (options.mode == CurveMode::binned) quantize(samples, options.bins);
  return partial_area(sweep(samples), fpr_limit);
}

double pixel_auroc(std::span<const Tensor> maps, std::span<const Tensor> masks, double fpr_limit,
                   const CurveOptions& options) {
  check_limit(fpr_limit);
  check_pairs(maps, masks);
  std::size_t pos = 0;
  std::size_t total = 0;
  for (const Tensor& m : masks) {
    for (float v : m.values()) pos += v != 0.0f ? 1 : 0;
    total += static_cast<std::size_t>(m.size());
  }
  const std::size_t neg = total - pos;
  if (pos == 0 || neg == 0) throw ConfigError("pixel_auroc needs both normal and anomalous pixels");
  std::vector<CurveSample> samples;
  samples.reserve(total);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    for (std::int64_t p = 0; p < maps[i].size(); ++p) {
      const bool a = masks[i][p] != 0.0f;
      samples.push_back({maps[i][p], a ? 0.0 : 1.0 / static_cast<double>(neg),
                         a ? 1.0 / static_cast<double>(pos) : 0.0});
    }
  }
  if (options.mode == CurveMode::binned) quantize(samples, options.bins);
  return partial_area(sweep(samples), fpr_limit);
}

EvalReport evaluate(const EvalSet& set, const EvalOptions& options) {
  EvalReport r;
  std::vector<float> scores;
  std::vector<std::uint8_t> labels;
  for (const EvalImage& im : set.images) {
    scores.push_back(im.score);
    labels.push_back(im.anomalous ? 1 : 0);
    (im.anomalous ? r.anomalous_images : r.normal_images) += 1;
  }
  r.image_auroc = auroc(scores, labels);
  r.image_auprc = auprc(scores, labels);

  std::map<std::string, std::vector<std::size_t>> by_type;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    if (set.images[i].anomalous) by_type[set.images[i].defect_type].push_back(i);
  }
  for (const auto& [type, members] : by_type) {
    std::vector<float> s;
    std::vector<std::uint8_t> l;
    for (std::size_t i = 0; i < set.images.size(); ++i) {
      if (!set.images[i].anomalous) {
        s.push_back(set.images[i].score);
        l.push_back(0);
      }
    }
    for (std::size_t i : members) {
      s.push_back(set.images[i].score);
      l.push_back(1);
    }
    r.auroc_by_type[type] = auroc(s, l);
  }

  const bool have_maps = !set.images.empty() &&
                         std::all_of(set.images.begin(), set.images.end(),
                                     [](const EvalImage& im) { return im.map.has_value(); });
  if (!have_maps) return r;
  std::vector<Tensor> maps;
  std::vector<Tensor> masks;
  bool any_positive = false;
  for (const EvalImage& im : set.images) {
    maps.push_back(*im.map);
    if (im.mask) {
      masks.push_back(*im.mask);
      for (float v : im.mask->values()) any_positive = any_positive || v != 0.0f;
    } else {
      masks.push_back(Tensor::zeros_like(*im.map));
    }
  }
  if (!any_positive) return r;
  r.aupro = aupro(maps, masks, options.pro_limit, options.curve);
  r.aupro_strict = aupro(maps, masks, options.pro_limit_strict, options.curve);
  r.pixel_auroc = pixel_auroc(maps, masks, options.pixel_limit, options.curve);
  return r;
}

std::string eval_report_json(const EvalReport& report, const EvalSet& set,
                             const EvalOptions& options) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["schema_version"] = 1;
  ordered_json m;
  m["image_auroc"] = report.image_auroc;
  m["image_auprc"] = report.image_auprc;
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(); };
  m["aupro"] = opt(report.aupro);
  m["aupro_strict"] = opt(report.aupro_strict);
  m["pixel_auroc"] = opt(report.pixel_auroc);
  j["metrics"] = m;
  ordered_json types = ordered_json::object();
  for (const auto& [type, v] : report.auroc_by_type) types[type] = v;
  j["auroc_by_type"] = types;
  j["config"] = {{"pro_limit", options.pro_limit},
                 {"pro_limit_strict", options.pro_limit_strict},
                 {"pixel_limit", options.pixel_limit},
                 {"curve_mode", options.curve.mode == CurveMode::exact ? "exact" : "binned"},
                 {"bins", options.curve.bins}};
  j["counts"] = {{"normal", report.normal_images}, {"anomalous", report.anomalous_images}};
  ordered_json images = ordered_json::array();
  for (const EvalImage& im : set.images) {
    images.push_back({{"name", im.name},
                      {"defect_type", im.defect_type},
                      {"anomalous", im.anomalous},
                      {"score", im.score}});
  }
  j["images"] = images;
  return j.dump(2) + "\n";
}

}  // namespace ead
