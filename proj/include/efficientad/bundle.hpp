#pragma once

#include "efficientad/nets.hpp"

namespace ead {

// Destinations of the quantile map normalization: q_a -> 0 and q_b -> 0.1.
struct MapQuantiles {
  float st_a = 0.0f;
  float st_b = 1.0f;
  float ae_a = 0.0f;
  float ae_b = 1.0f;

  friend bool operator==(const MapQuantiles&, const MapQuantiles&) = default;
};

// Everything training returns and inference consumes.
struct ModelBundle {
  ArchConfig arch;
  Network teacher;
  Network student;
  Network autoencoder;
  ChannelNorm teacher_norm;
  MapQuantiles quantiles;

  std::int64_t parameter_count() const {
    return teacher.parameter_count() + student.parameter_count() +
           autoencoder.parameter_count();
  }
};

}  // namespace ead
