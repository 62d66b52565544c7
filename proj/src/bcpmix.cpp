#include "graphcl/bcpmix.hpp"

#include <cmath>

namespace graphcl {

MixMask gen_mask(const std::array<int, 3>& spatial_dims,
                 const std::array<real, 3>& zero_ratio, Rng& rng) {
  MixMask m;
  m.dims = spatial_dims;
  for (int a = 0; a < 3; ++a) {
    if (spatial_dims[a] < 1) throw ConfigError("gen_mask: nonpositive dim");
    if (zero_ratio[a] < 0 || zero_ratio[a] > 1)
      throw ConfigError("gen_mask: zero_ratio must be in [0,1]");
    m.zero_size[a] = static_cast<int>(std::floor(zero_ratio[a] * spatial_dims[a]));
  }
  for (int a = 0; a < 3; ++a) {
    const int range = spatial_dims[a] - m.zero_size[a];
    m.zero_origin[a] = range > 0 ? static_cast<int>(rng.uniform_index(range + 1)) : 0;
  }
  return m;
}

namespace {

void require_spatial_match(const std::array<int, 3>& a, const std::array<int, 3>& b,
                           const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": spatial dims mismatch [" +
                     std::to_string(a[0]) + "," + std::to_string(a[1]) + "," +
                     std::to_string(a[2]) + "] vs [" + std::to_string(b[0]) + "," +
                     std::to_string(b[1]) + "," + std::to_string(b[2]) + "]");
}

}  // namespace

Volume mix_pair(const Volume& xl, const Volume& xu, const MixMask& m, MixDirection dir) {
  const std::array<int, 3> dl = {xl.depth(), xl.height(), xl.width()};
  const std::array<int, 3> du = {xu.depth(), xu.height(), xu.width()};
  require_spatial_match(dl, du, "mix_pair");
  require_spatial_match(dl, m.dims, "mix_pair(mask)");
  if (xl.channels() != xu.channels()) throw ShapeError("mix_pair: channel mismatch");
  Volume out;
  out.data = Tensor(xl.data.shape);
  out.spacing = xl.spacing;
  out.id = (dir == MixDirection::In ? "in(" : "out(") + xl.id + "," + xu.id + ")";
  const std::int64_t n = m.voxels();
  for (int c = 0; c < xl.channels(); ++c)
    for (std::int64_t i = 0; i < n; ++i) {
      const bool one = m.is_one(i);
      const bool from_l = (dir == MixDirection::In) ? one : !one;
      out.data.data[c * n + i] = from_l ? xl.data.data[c * n + i] : xu.data.data[c * n + i];
    }
  return out;
}

LabelMap mix_labels(const LabelMap& yl, const LabelMap& yu_pseudo, const MixMask& m,
                    MixDirection dir) {
  require_spatial_match(yl.dims, yu_pseudo.dims, "mix_labels");
  require_spatial_match(yl.dims, m.dims, "mix_labels(mask)");
  if (yl.classes != yu_pseudo.classes)
    throw ConfigError("mix_labels: class count mismatch " + std::to_string(yl.classes) +
                      " vs " + std::to_string(yu_pseudo.classes));
  LabelMap out;
  out.classes = yl.classes;
  out.dims = yl.dims;
  out.grid.resize(yl.grid.size());
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(out.grid.size()); ++i) {
    const bool one = m.is_one(i);
    const bool from_l = (dir == MixDirection::In) ? one : !one;
    out.grid[i] = from_l ? yl.grid[i] : yu_pseudo.grid[i];
  }
  return out;
}

}  // namespace graphcl
