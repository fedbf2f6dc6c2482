#include "efficientad/checkpoint.hpp"

#include <cmath>

#include "efficientad/error.hpp"

namespace ead {
namespace {

Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }

void put_meta(Ead1File& file, const ArchConfig& arch) {
  file.records.push_back({"meta/variant", scalar(arch.variant == Variant::small ? 0.0f : 1.0f)});
  file.records.push_back({"meta/padding", scalar(arch.padding ? 1.0f : 0.0f)});
  file.records.push_back({"meta/width_divisor", scalar(static_cast<float>(arch.width_divisor))});
}

ArchConfig get_meta(const Ead1File& file) {
  auto value = [&](const char* name) {
    const Tensor& t = file.get(name);
    if (t.size() != 1) throw FormatError(std::string(name) + " must hold one value");
    return t[0];
  };
  ArchConfig arch;
  const float variant = value("meta/variant");
  if (variant != 0.0f && variant != 1.0f) throw FormatError("unknown variant tag");
  arch.variant = variant == 0.0f ? Variant::small : Variant::medium;
  arch.padding = value("meta/padding") != 0.0f;
  arch.width_divisor = static_cast<int>(std::lround(value("meta/width_divisor")));
  arch.validate();
  return arch;
}

void put_network(Ead1File& file, const std::string& prefix, const Network& net) {
  std::size_t k = 0;
  for (const LayerSpec& l : net.layers) {
    if (l.kind != LayerKind::conv) continue;
    file.records.push_back({prefix + "/" + l.name + ".weight", net.params[k].weight});
    file.records.push_back({prefix + "/" + l.name + ".bias", net.params[k].bias});
    ++k;
  }
}

// Fills the parameters of `net` (layers already set) from the file.
void get_network(const Ead1File& file, const std::string& prefix, Network& net) {
  net.params.clear();
  int in = net.in_channels;
  for (const LayerSpec& l : net.layers) {
    if (l.kind != LayerKind::conv) continue;
    const std::string base = prefix + "/" + l.name;
    ConvParams p{file.get(base + ".weight"), file.get(base + ".bias")};
    const std::vector<std::int64_t> wdims{l.conv.out_channels, in, l.conv.kernel_h,
                                          l.conv.kernel_w};
    if (p.weight.dims() != wdims || p.bias.dims() != std::vector<std::int64_t>{l.conv.out_channels}) {
      throw FormatError(base + " has shape " + p.weight.shape_string() +
                        " which does not match the architecture");
    }
    net.params.push_back(std::move(p));
    in = l.conv.out_channels;
  }
}

Network skeleton(const std::string& name, std::vector<LayerSpec> layers) {
  Network net;
  net.name = name;
  net.in_channels = 3;
  net.layers = std::move(layers);
  return net;
}

}  // namespace

Ead1File bundle_to_ead1(const ModelBundle& bundle) {
  Ead1File file;
  file.role = "checkpoint";
  put_meta(file, bundle.arch);
  put_network(file, "teacher", bundle.teacher);
  put_network(file, "student", bundle.student);
  put_network(file, "autoencoder", bundle.autoencoder);
  const auto c = static_cast<std::int64_t>(bundle.teacher_norm.channels());
  file.records.push_back({"teacher_norm/mean", Tensor({c}, bundle.teacher_norm.mean)});
  file.records.push_back({"teacher_norm/stddev", Tensor({c}, bundle.teacher_norm.stddev)});
  const MapQuantiles& q = bundle.quantiles;
  file.records.push_back({"quantiles", Tensor({4}, {q.st_a, q.st_b, q.ae_a, q.ae_b})});
  return file;
}

ModelBundle bundle_from_ead1(const Ead1File& file) {
  if (file.role != "checkpoint") {
    throw FormatError("expected an EAD1 checkpoint, got role '" + file.role + "'");
  }
  ModelBundle b;
  b.arch = get_meta(file);
  const std::string variant = to_string(b.arch.variant);
  b.teacher = skeleton("teacher-" + variant, pdn_layers(b.arch, Role::teacher));
  b.student = skeleton("student-" + variant, pdn_layers(b.arch, Role::student));
  b.autoencoder = skeleton("autoencoder", autoencoder_layers(b.arch));
  get_network(file, "teacher", b.teacher);
  get_network(file, "student", b.student);
  get_network(file, "autoencoder", b.autoencoder);
  const Tensor& mean = file.get("teacher_norm/mean");
  const Tensor& stddev = file.get("teacher_norm/stddev");
  if (mean.size() != b.arch.feature_channels() || stddev.size() != mean.size()) {
    throw FormatError("teacher_norm has " + std::to_string(mean.size()) + " channels");
  }
  b.teacher_norm.mean = mean.storage();
  b.teacher_norm.stddev = stddev.storage();
  const Tensor& q = file.get("quantiles");
  if (q.size() != 4) throw FormatError("quantiles record must hold 4 values");
  b.quantiles = MapQuantiles{q[0], q[1], q[2], q[3]};
  return b;
}

void save_bundle(const ModelBundle& bundle, const std::string& path) {
  write_ead1(path, bundle_to_ead1(bundle));
}

ModelBundle load_bundle(const std::string& path) { return bundle_from_ead1(read_ead1(path)); }

void save_teacher(const Network& teacher, const ArchConfig& arch, const std::string& path) {
  Ead1File file;
  file.role = "teacher";
  put_meta(file, arch);
  put_network(file, "teacher", teacher);
  write_ead1(path, file);
}

Network load_teacher(const std::string& path, ArchConfig* arch_out) {
  const Ead1File file = read_ead1(path);
  if (file.role != "teacher" && file.role != "checkpoint") {
    throw FormatError(path + ": expected a teacher or checkpoint file, got role '" + file.role + "'");
  }
  const ArchConfig arch = get_meta(file);
  Network teacher = skeleton("teacher-" + to_string(arch.variant), pdn_layers(arch, Role::teacher));
  get_network(file, "teacher", teacher);
  if (arch_out) *arch_out = arch;
  return teacher;
}

}  // namespace ead
