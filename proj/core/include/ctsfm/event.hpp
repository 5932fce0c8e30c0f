#pragma once

#include <cstdint>
#include <optional>

#include "ctsfm/lie.hpp"

namespace ctsfm {

using TrackId = std::int64_t;

/// One asynchronous measurement e_k = (z_k, t_k, p_k), plus the track label
/// assigned by the front-end. Polarity is carried but no estimator term reads it.
struct EventObservation {
  Vector2d pixel = Vector2d::Zero();
  double timestamp = 0.0;
  int polarity = 1;
  std::optional<TrackId> track_id;
};

}  // namespace ctsfm
