#pragma once

#include <string>

#include "efficientad/bundle.hpp"
#include "efficientad/ead1.hpp"

namespace ead {

// Model bundles are EAD1 files with role "checkpoint". Records:
//   meta/variant, meta/padding, meta/width_divisor     [1]
//   teacher/<layer>.weight|bias, student/..., autoencoder/...
//   teacher_norm/mean, teacher_norm/stddev              [C]
//   quantiles                                           [4] st_a st_b ae_a ae_b
Ead1File bundle_to_ead1(const ModelBundle& bundle);
ModelBundle bundle_from_ead1(const Ead1File& file);

void save_bundle(const ModelBundle& bundle, const std::string& path);
ModelBundle load_bundle(const std::string& path);

// Distilled teacher on its own: role "teacher", meta/* plus teacher/* records.
void save_teacher(const Network& teacher, const ArchConfig& arch, const std::string& path);
Network load_teacher(const std::string& path, ArchConfig* arch = nullptr);

}  // namespace ead
