#pragma once

#include <array>
#include <string>
#include <vector>

#include "graphcl/volume.hpp"

namespace graphcl {

struct MetricsRecord {
  std::string volume_id;
  int class_id = 1;
  real dice = 0, jaccard = 0, hd95 = 0, asd = 0;
  bool empty_pred = false, empty_gt = false;
};

// Boundary voxels: class voxels with >= 1 out-of-class neighbor under
// 6-connectivity (4 in 2D); the image border counts as background.
struct SurfaceSet {
  std::vector<std::array<int, 3>> points;  // (d,h,w)
};

enum class Hd95Mode { MaxOfDirected, Pooled };

std::pair<real, real> dice_jaccard(const LabelMap& pred, const LabelMap& gt, int cls);

SurfaceSet extract_surface(const LabelMap& mask, int cls);

// Returns (hd95, asd); empty surfaces take the image-diagonal sentinel.
struct SurfaceDistances {
  real hd95 = 0, asd = 0;
  bool empty_pred = false, empty_gt = false;
};
SurfaceDistances hd95_asd(const SurfaceSet& pred, const SurfaceSet& gt,
                          const std::array<real, 3>& spacing,
                          const std::array<int, 3>& dims,
                          Hd95Mode mode = Hd95Mode::MaxOfDirected);

std::vector<MetricsRecord> evaluate_volume(const std::string& id, const LabelMap& pred,
                                           const LabelMap& gt,
                                           const std::array<real, 3>& spacing,
                                           Hd95Mode mode = Hd95Mode::MaxOfDirected);

// CSV per (volume, foreground class) plus one `mean` summary row per class.
std::string metrics_csv(const std::vector<MetricsRecord>& records);

}  // namespace graphcl
