#include "efficientad/cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

#include "efficientad/bench.hpp"
#include "efficientad/checkpoint.hpp"
#include "efficientad/dataset.hpp"
#include "efficientad/distill.hpp"
#include "efficientad/ead1.hpp"
#include "efficientad/error.hpp"
#include "efficientad/image_io.hpp"
#include "efficientad/inference.hpp"
#include "efficientad/metrics.hpp"
#include "efficientad/ops.hpp"
#include "efficientad/preprocess.hpp"
#include "efficientad/synthetic.hpp"
#include "efficientad/training.hpp"

namespace ead {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

int default_threads() {
  if (const char* env = std::getenv("EAD_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    spdlog::warn("ignoring EAD_THREADS='{}'", env);
  }
  return 1;
}

struct ArchOptions {
  std::string variant = "S";
  bool padding = true;
  int width_divisor = 1;

  ArchConfig config() const {
    ArchConfig a;
    a.variant = parse_variant(variant);
    a.padding = padding;
    a.width_divisor = width_divisor;
    a.validate();
    return a;
  }
};

void add_arch_options(CLI::App* app, ArchOptions& o) {
  app->add_option("--variant", o.variant, "Network size: S or M")
      ->check(CLI::IsMember({"S", "M", "s", "m"}))
      ->capture_default_str();
  app->add_option("--width-divisor", o.width_divisor,
                  "Divide every channel count by this (1, 2, 4, 8, 16 or 32)")
      ->capture_default_str();
  app->add_flag("--padding,!--no-padding", o.padding, "Zero padding in the PDN convolutions")
      ->capture_default_str();
}

ordered_json arch_json(const ArchConfig& a) {
  return {{"variant", to_string(a.variant)},
          {"padding", a.padding},
          {"width_divisor", a.width_divisor}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

// Collects the files a command produces and lists them in outputs.json.
class RunDir {
 public:
  explicit RunDir(const std::string& dir) : root_(dir) { fs::create_directories(root_); }

  fs::path path(const std::string& rel) const { return root_ / rel; }
  void add(const std::string& rel) { files_.push_back(rel); }

  void finish(const std::string& command, const ordered_json& config) const {
    ordered_json j;
    j["schema_version"] = 1;
    j["command"] = command;
    j["config"] = config;
    auto files = files_;
    std::sort(files.begin(), files.end());
    j["files"] = files;
    write_text(root_ / "outputs.json", j.dump(2) + "\n");
  }

 private:
  fs::path root_;
  std::vector<std::string> files_;
};

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

std::string relative_to(const std::string& path, const std::string& base) {
  return fs::path(path).lexically_relative(base).generic_string();
}

// Reapplies the layer list for a padding setting; weights are unchanged.
Network with_padding(Network net, ArchConfig arch, bool padding, Role role) {
  arch.padding = padding;
  net.layers = pdn_layers(arch, role);
  return net;
}

std::int64_t log_every(std::int64_t iterations) {
  return std::max<std::int64_t>(1, iterations / 20);
}

// ---- distill ----------------------------------------------------------------

struct DistillOptions {
  ArchOptions arch;
  std::string manifest;
  std::string out;
  DistillConfig cfg;
};

void run_distill(const DistillOptions& o) {
  DistillConfig cfg = o.cfg;
  cfg.arch = o.arch.config();
  const auto rows = read_manifest(o.manifest);
  if (rows.empty()) throw ConfigError(o.manifest + ": manifest has no rows");
  const std::int64_t side = feature_map_size(cfg.arch);
  std::vector<DistillSample> samples;
  for (const ManifestRow& r : rows) {
    DistillSample s;
    s.image_path = r.image;
    s.image = load_image_rgb(r.image, kImageSize);
    s.target = read_features(r.features, cfg.arch.feature_channels(), side);
    if (r.gray_features) {
      s.gray_target = read_features(*r.gray_features, cfg.arch.feature_channels(), side);
    }
    samples.push_back(std::move(s));
  }
  spdlog::info("distill: {} pairs, {} iterations, batch {}", samples.size(), cfg.iterations,
               cfg.batch_size);
  const std::int64_t every = log_every(cfg.iterations);
  DistillResult res = distill(samples, cfg, [&](std::int64_t it, double loss) {
    if (it % every == 0 || it == 1) spdlog::info("distill {}/{} loss {:.6f}", it, cfg.iterations, loss);
  });
  RunDir run(o.out);
  save_teacher(res.teacher, cfg.arch, run.path("teacher.ead1").string());
  run.add("teacher.ead1");
  std::string csv = "iteration,loss\n";
  for (std::size_t i = 0; i < res.losses.size(); ++i) {
    csv += std::to_string(i + 1) + "," + fmt::format("{:.9g}", res.losses[i]) + "\n";
  }
  write_text(run.path("distill_loss.csv"), csv);
  run.add("distill_loss.csv");
  run.finish("distill", {{"manifest", o.manifest},
                         {"arch", arch_json(cfg.arch)},
                         {"iterations", cfg.iterations},
                         {"batch_size", cfg.batch_size},
                         {"lr", cfg.lr},
                         {"weight_decay", cfg.weight_decay},
                         {"gray_prob", cfg.gray_prob},
                         {"seed", cfg.seed}});
}

// ---- train ------------------------------------------------------------------

struct TrainOptions {
  std::string dataset;
  std::string teacher;
  std::string penalty_dir;
  std::string out;
  bool padding = true;
  TrainConfig cfg;
};

void run_train(const TrainOptions& o) {
  TrainConfig cfg = o.cfg;
  ArchConfig stored;
  Network teacher = load_teacher(o.teacher, &stored);
  cfg.arch = stored;
  cfg.arch.padding = o.padding;
  teacher = with_padding(std::move(teacher), stored, o.padding, Role::teacher);
  cfg.validate();

  const DatasetIndex index = index_dataset(o.dataset);
  if (index.train.size() < 2) throw ConfigError(o.dataset + ": need at least 2 training images");
  std::vector<Tensor> images;
  for (const auto& p : index.train) images.push_back(load_image_rgb(p, kImageSize));
  std::vector<Tensor> corpus;
  for (const auto& p : list_images(o.penalty_dir)) corpus.push_back(read_image_rgb(p));
  if (corpus.empty()) throw ConfigError(o.penalty_dir + ": no images for the penalty corpus");
  spdlog::info("train: {} images, {} penalty images, {} iterations", images.size(),
               corpus.size(), cfg.iterations);
  const std::int64_t every = log_every(cfg.iterations);
  TrainResult res = train(teacher, images, corpus, cfg, [&](std::int64_t it, const LossReport& l) {
    if (it % every == 0 || it == 1) {
      spdlog::info("train {}/{} total {:.5f} hard {:.5f} ae {:.5f} stae {:.5f}", it,
                   cfg.iterations, l.l_total, l.l_hard, l.l_ae, l.l_stae);
    }
  });
  RunDir run(o.out);
  save_bundle(res.bundle, run.path("bundle.ead1").string());
  run.add("bundle.ead1");
  write_loss_csv(res.history, run.path("loss.csv").string());
  run.add("loss.csv");
  run.finish("train", {{"dataset", o.dataset},
                       {"teacher", o.teacher},
                       {"penalty_dir", o.penalty_dir},
                       {"arch", arch_json(cfg.arch)},
                       {"iterations", cfg.iterations},
                       {"lr_decay_at", cfg.decay_iteration()},
                       {"p_hard", cfg.p_hard},
                       {"quantile_a", cfg.quantile_a},
                       {"quantile_b", cfg.quantile_b},
                       {"holdout_fraction", cfg.holdout_fraction},
                       {"seed", cfg.seed}});
}

// ---- infer ------------------------------------------------------------------

struct InferOptions {
  std::string bundle;
  std::string dataset;
  std::string out;
};

void run_infer(const InferOptions& o) {
  const ModelBundle bundle = load_bundle(o.bundle);
  const DatasetIndex index = index_dataset(o.dataset);
  if (index.test.empty()) throw ConfigError(o.dataset + ": no test images");
  RunDir run(o.out);
  ordered_json images = ordered_json::array();
  for (const TestEntry& e : index.test) {
    const auto [h, w] = read_image_size(e.path);
    const AnomalyResult res = infer(bundle, load_image(e.path, kImageSize));
    const Tensor map = resize_map_to_original(res.combined, h, w);
    const std::string base = "maps/" + e.defect_type + "/" + stem_of(e.path);
    fs::create_directories(run.path("maps/" + e.defect_type));
    write_png_map16(run.path(base + ".png").string(), map);
    Ead1File f;
    f.role = "map";
    f.records.push_back({"anomaly_map", map});
    write_ead1(run.path(base + ".ead1").string(), f);
    run.add(base + ".png");
    run.add(base + ".png.txt");
    run.add(base + ".ead1");
    images.push_back({{"image", relative_to(e.path, index.root)},
                      {"defect_type", e.defect_type},
                      {"anomalous", e.anomalous},
                      {"score", res.image_score},
                      {"map", base + ".ead1"}});
    spdlog::debug("infer {} score {}", e.path, res.image_score);
  }
  ordered_json scores;
  scores["schema_version"] = 1;
  scores["images"] = images;
  write_text(run.path("scores.json"), scores.dump(2) + "\n");
  run.add("scores.json");
  run.finish("infer", {{"bundle", o.bundle}, {"dataset", o.dataset}});
  spdlog::info("infer: {} images", index.test.size());
}

// ---- eval -------------------------------------------------------------------

struct EvalCliOptions {
  std::string predictions;
  std::string dataset;
  std::string out;
  bool binned = false;
  EvalOptions eval;
};

void run_eval(const EvalCliOptions& o) {
  EvalOptions opts = o.eval;
  opts.curve.mode = o.binned ? CurveMode::binned : CurveMode::exact;
  const DatasetIndex index = index_dataset(o.dataset);
  std::map<std::string, const TestEntry*> by_name;
  for (const TestEntry& e : index.test) by_name[relative_to(e.path, index.root)] = &e;

  const fs::path pred(o.predictions);
  std::ifstream f(pred / "scores.json");
  if (!f) throw IoError((pred / "scores.json").string() + ": cannot open");
  ordered_json scores;
  try {
    scores = ordered_json::parse(f);
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError((pred / "scores.json").string() + ": " + ex.what());
  }
  EvalSet set;
  for (const auto& item : scores.at("images")) {
    EvalImage im;
    im.name = item.at("image").get<std::string>();
    im.defect_type = item.at("defect_type").get<std::string>();
    im.anomalous = item.at("anomalous").get<bool>();
    im.score = item.at("score").get<float>();
    Tensor map = read_ead1((pred / item.at("map").get<std::string>()).string()).get("anomaly_map");
    const auto it = by_name.find(im.name);
    if (it == by_name.end()) throw ConfigError(im.name + " is not a test image of " + o.dataset);
    if (it->second->mask_path) {
      Tensor mask = load_mask(*it->second->mask_path);
      if (!mask.same_shape(map)) {
        throw ShapeError(im.name + ": map " + map.shape_string() + " vs mask " + mask.shape_string());
      }
      im.mask = std::move(mask);
    }
    im.map = std::move(map);
    set.images.push_back(std::move(im));
  }
  const EvalReport report = evaluate(set, opts);
  RunDir run(o.out);
  write_text(run.path("metrics.json"), eval_report_json(report, set, opts));
  run.add("metrics.json");
  run.finish("eval", {{"predictions", o.predictions}, {"dataset", o.dataset}});
  spdlog::info("eval: image AU-ROC {:.4f}", report.image_auroc);
}

// ---- bench ------------------------------------------------------------------

struct BenchOptions {
  std::string bundle;
  std::string image;
  std::string out;
  BenchConfig cfg;
};

void run_bench(const BenchOptions& o, int threads) {
  BenchConfig cfg = o.cfg;
  cfg.threads = threads;
  const ModelBundle bundle = load_bundle(o.bundle);
  Tensor image;
  if (o.image.empty()) {
    Rng rng(1);
    image = standardize(make_scene(rng, SyntheticConfig{}, "good").rgb);
  } else {
    image = load_image(o.image, kImageSize);
  }
  const BenchReport r = measure_latency(bundle, image, cfg);
  RunDir run(o.out);
  write_text(run.path("bench.json"), bench_report_json(r));
  write_text(run.path("bench_samples.csv"), bench_samples_csv(r));
  run.add("bench.json");
  run.add("bench_samples.csv");
  run.finish("bench", {{"bundle", o.bundle}, {"warmup", cfg.warmup}, {"timed", cfg.timed}});
  spdlog::info("bench: {:.3f} ms mean, {:.2f} img/s", r.latency_mean_ms, r.throughput_ips);
}

// ---- synth ------------------------------------------------------------------

void run_synth(const SyntheticConfig& cfg, const std::string& out) {
  const SyntheticDataset data = make_synthetic_dataset(cfg);
  write_synthetic_dataset(data, out);
  spdlog::info("synth: wrote {} train, {} test, {} natural images to {}", data.train.size(),
               data.test.size(), data.natural.size(), out);
}

// ---- export-reference -------------------------------------------------------

struct ExportOptions {
  ArchOptions arch;
  std::string images;
  std::string out;
  std::uint64_t seed = 1234;
  bool gray = false;
};

void run_export_reference(const ExportOptions& o) {
  const ArchConfig arch = o.arch.config();
  Rng rng(o.seed);
  const Network reference = make_pdn(arch, Role::teacher, rng);
  const auto paths = list_images(o.images);
  if (paths.empty()) throw ConfigError(o.images + ": no images");
  const fs::path out(o.out);
  fs::create_directories(out / "features");
  std::vector<ManifestRow> rows;
  for (const std::string& p : paths) {
    const Tensor rgb = load_image_rgb(p, kImageSize);
    ManifestRow row;
    row.image = relative_to(fs::absolute(p).string(), fs::absolute(out).string());
    row.features = "features/" + stem_of(p) + ".ead1";
    write_features((out / row.features).string(), forward(reference, standardize(rgb)));
    if (o.gray) {
      row.gray_features = "features/" + stem_of(p) + "_gray.ead1";
      write_features((out / *row.gray_features).string(),
                     forward(reference, standardize(to_grayscale(rgb))));
    }
    rows.push_back(std::move(row));
  }
  write_manifest((out / "manifest.tsv").string(), rows,
                 {"reference-pdn seed=" + std::to_string(o.seed) + " variant=" +
                  to_string(arch.variant) + " width_divisor=" + std::to_string(arch.width_divisor)});
  spdlog::info("export-reference: {} feature files", rows.size());
}

void setup_logging(bool quiet) {
  auto logger = spdlog::get("efficientad");
  if (!logger) logger = spdlog::stderr_color_mt("efficientad");
  spdlog::set_default_logger(logger);
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EfficientAD anomaly detection: distill, train, infer, eval, bench"};
  app.name(args.empty() ? "efficientad" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);
  int threads = default_threads();
  bool quiet = false;
  app.add_option("--threads", threads, "Worker threads for the tensor core (default: EAD_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  DistillOptions dist;
  auto* c_dist = app.add_subcommand("distill", "Distill a PDN teacher from backbone features");
  add_arch_options(c_dist, dist.arch);
  c_dist->add_option("--manifest", dist.manifest, "TSV manifest of image/feature pairs")
      ->required()
      ->check(CLI::ExistingFile);
  c_dist->add_option("--out", dist.out, "Run directory")->required();
  c_dist->add_option("--iterations", dist.cfg.iterations)->capture_default_str();
  c_dist->add_option("--batch-size", dist.cfg.batch_size)->capture_default_str();
  c_dist->add_option("--lr", dist.cfg.lr)->capture_default_str();
  c_dist->add_option("--gray-prob", dist.cfg.gray_prob)->capture_default_str();
  c_dist->add_option("--norm-samples", dist.cfg.norm_sample_count,
                     "Feature draws for the backbone normalization (-1: automatic)")
      ->capture_default_str();
  c_dist->add_option("--seed", dist.cfg.seed)->capture_default_str();

  TrainOptions tr;
  auto* c_train = app.add_subcommand("train", "Train student and autoencoder");
  c_train->add_option("--dataset", tr.dataset, "Dataset root")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--teacher", tr.teacher, "Distilled teacher file")
      ->required()
      ->check(CLI::ExistingFile);
  c_train->add_option("--penalty-dir", tr.penalty_dir, "Images for the pretraining penalty")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_train->add_option("--out", tr.out, "Run directory")->required();
  c_train->add_flag("--padding,!--no-padding", tr.padding)->capture_default_str();
  c_train->add_option("--iterations", tr.cfg.iterations)->capture_default_str();
  c_train->add_option("--lr-decay-at", tr.cfg.lr_decay_at,
                      "Iteration after which the learning rate drops (-1: 95%)")
      ->capture_default_str();
  c_train->add_option("--p-hard", tr.cfg.p_hard)->capture_default_str();
  c_train->add_option("--quantile-a", tr.cfg.quantile_a)->capture_default_str();
  c_train->add_option("--quantile-b", tr.cfg.quantile_b)->capture_default_str();
  c_train->add_option("--holdout", tr.cfg.holdout_fraction, "Validation share of train/good")
      ->capture_default_str();
  c_train->add_option("--seed", tr.cfg.seed)->capture_default_str();

  InferOptions inf;
  auto* c_infer = app.add_subcommand("infer", "Anomaly maps and scores for the test images");
  c_infer->add_option("--bundle", inf.bundle)->required()->check(CLI::ExistingFile);
  c_infer->add_option("--dataset", inf.dataset, "Dataset root")->required()->check(CLI::ExistingDirectory);
  c_infer->add_option("--out", inf.out, "Run directory")->required();

  EvalCliOptions ev;
  auto* c_eval = app.add_subcommand("eval", "Metrics from infer output and ground truth");
  c_eval->add_option("--predictions", ev.predictions, "Run directory written by infer")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_eval->add_option("--dataset", ev.dataset, "Dataset root")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--out", ev.out, "Run directory")->required();
  c_eval->add_option("--pro-limit", ev.eval.pro_limit)->capture_default_str();
  c_eval->add_option("--pro-limit-strict", ev.eval.pro_limit_strict)->capture_default_str();
  c_eval->add_option("--pixel-limit", ev.eval.pixel_limit)->capture_default_str();
  c_eval->add_flag("--binned", ev.binned, "Quantize pixel scores into bins");
  c_eval->add_option("--bins", ev.eval.curve.bins)->capture_default_str();

  BenchOptions be;
  auto* c_bench = app.add_subcommand("bench", "Latency, throughput, parameter and FLOP counts");
  c_bench->add_option("--bundle", be.bundle)->required()->check(CLI::ExistingFile);
  c_bench->add_option("--image", be.image, "Input image (default: a synthetic scene)")
      ->check(CLI::ExistingFile);
  c_bench->add_option("--out", be.out, "Run directory")->required();
  c_bench->add_option("--warmup", be.cfg.warmup)->capture_default_str();
  c_bench->add_option("--timed", be.cfg.timed)->capture_default_str();
  c_bench->add_option("--batch-size", be.cfg.batch_size)->capture_default_str();
  c_bench->add_option("--batch-runs", be.cfg.batch_runs)->capture_default_str();
  c_bench->add_flag("--parallel-batch", be.cfg.parallel_batch,
                    "Run batch members on separate threads");

  SyntheticConfig syn;
  std::string syn_out;
  auto* c_synth = app.add_subcommand("synth", "Write the synthetic benchmark dataset");
  c_synth->add_option("--out", syn_out, "Dataset root to create")->required();
  c_synth->add_option("--seed", syn.seed)->capture_default_str();
  c_synth->add_option("--normal-train", syn.normal_train)->capture_default_str();
  c_synth->add_option("--normal-test", syn.normal_test)->capture_default_str();
  c_synth->add_option("--structural", syn.structural)->capture_default_str();
  c_synth->add_option("--layout", syn.layout)->capture_default_str();
  c_synth->add_option("--natural", syn.natural)->capture_default_str();

  ExportOptions ex;
  auto* c_export = app.add_subcommand(
      "export-reference", "Feature files and manifest from a seeded reference PDN");
  add_arch_options(c_export, ex.arch);
  c_export->add_option("--images", ex.images)->required()->check(CLI::ExistingDirectory);
  c_export->add_option("--out", ex.out)->required();
  c_export->add_option("--seed", ex.seed)->capture_default_str();
  c_export->add_flag("--gray", ex.gray, "Also write features of the grayscale image");

  try {
    std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
    std::reverse(rev.begin(), rev.end());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  setup_logging(quiet);
  set_num_threads(threads);
  try {
    if (c_dist->parsed()) run_distill(dist);
    if (c_train->parsed()) run_train(tr);
    if (c_infer->parsed()) run_infer(inf);
    if (c_eval->parsed()) run_eval(ev);
    if (c_bench->parsed()) run_bench(be, threads);
    if (c_synth->parsed()) run_synth(syn, syn_out);
    if (c_export->parsed()) run_export_reference(ex);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace ead
