#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "graphcl/rng.hpp"
#include "graphcl/volume.hpp"

namespace graphcl {

enum class MixDirection { In, Out };

// Binary grid with exactly one axis-aligned block of zeros.
struct MixMask {
  std::array<int, 3> dims{1, 1, 1};         // (D,H,W)
  std::array<int, 3> zero_origin{0, 0, 0};
  std::array<int, 3> zero_size{0, 0, 0};

  std::int64_t voxels() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }
  bool is_one(std::int64_t i) const {
    const int w = static_cast<int>(i % dims[2]);
    const int h = static_cast<int>((i / dims[2]) % dims[1]);
    const int d = static_cast<int>(i / (static_cast<std::int64_t>(dims[1]) * dims[2]));
    return !(d >= zero_origin[0] && d < zero_origin[0] + zero_size[0] &&
             h >= zero_origin[1] && h < zero_origin[1] + zero_size[1] &&
             w >= zero_origin[2] && w < zero_origin[2] + zero_size[2]);
  }
  std::int64_t zeros() const {
    return static_cast<std::int64_t>(zero_size[0]) * zero_size[1] * zero_size[2];
  }
};

struct MixedBatch {
  Volume x_in, x_out;
  LabelMap y_in, y_out;
  MixMask mask;
  std::string id_j, id_k, id_m, id_n;  // provenance
};

// zero_size[a] = floor(ratio[a] * dims[a]); origin uniform over valid range.
MixMask gen_mask(const std::array<int, 3>& spatial_dims,
                 const std::array<real, 3>& zero_ratio, Rng& rng);

// In:  xl . M + xu . (1-M);  Out: xu . M + xl . (1-M).
Volume mix_pair(const Volume& xl, const Volume& xu, const MixMask& m,
                MixDirection dir);
LabelMap mix_labels(const LabelMap& yl, const LabelMap& yu_pseudo, const MixMask& m,
                    MixDirection dir);

}  // namespace graphcl
