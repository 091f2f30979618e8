#pragma once

#include <string>
#include <vector>

#include "logo/geometry.hpp"

namespace logo {

// Unit flowing detector -> classifier -> tracker.
struct Detection {
  geom::RotatedQuad quad;
  double score = 0.0;
};

struct Instance {
  geom::RotatedQuad quad;
  std::string text;
  int track_id = -1;
  bool legible = true;
};

struct FrameAnnotation {
  int frame_id = 0;
  std::vector<Instance> instances;
};

}  // namespace logo
