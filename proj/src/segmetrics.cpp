#include "graphcl/segmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace graphcl {

std::pair<real, real> dice_jaccard(const LabelMap& pred, const LabelMap& gt, int cls) {
  if (pred.dims != gt.dims)
    throw ShapeError("dice_jaccard: dim mismatch");
  std::int64_t np = 0, ng = 0, ni = 0;
  for (std::int64_t i = 0; i < pred.voxels(); ++i) {
    const bool p = pred.grid[i] == cls;
    const bool g = gt.grid[i] == cls;
    np += p;
    ng += g;
    ni += p && g;
  }
  if (np == 0 && ng == 0) return {1.0, 1.0};
  if (np == 0 || ng == 0) return {0.0, 0.0};
  const real dice = 2.0 * ni / static_cast<real>(np + ng);
  const real jacc = static_cast<real>(ni) / static_cast<real>(np + ng - ni);
  return {dice, jacc};
}

SurfaceSet extract_surface(const LabelMap& mask, int cls) {
  SurfaceSet out;
  const int D = mask.dims[0], H = mask.dims[1], W = mask.dims[2];
  auto at = [&](int d, int h, int w) {
    return mask.grid[(static_cast<std::int64_t>(d) * H + h) * W + w] == cls;
  };
  for (int d = 0; d < D; ++d)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        if (!at(d, h, w)) continue;
        bool boundary = false;
        // depth neighbors only participate in 3D
        if (D > 1 && (d == 0 || d == D - 1 || !at(d - 1, h, w) || !at(d + 1, h, w)))
          boundary = true;
        if (h == 0 || h == H - 1 || !at(d, h - 1, w) || !at(d, h + 1, w)) boundary = true;
        if (w == 0 || w == W - 1 || !at(d, h, w - 1) || !at(d, h, w + 1)) boundary = true;
        if (boundary) out.points.push_back({d, h, w});
      }
  return out;
}

namespace {

real percentile95(std::vector<real> v) {
  std::sort(v.begin(), v.end());
  const real rank = 0.95 * static_cast<real>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(rank);
  const real frac = rank - static_cast<real>(lo);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

// Directed min distances from each point of `from` to the set `to`.
std::vector<real> directed_distances(const SurfaceSet& from, const SurfaceSet& to,
                                     const std::array<real, 3>& spacing) {
  std::vector<real> out;
  out.reserve(from.points.size());
  for (const auto& a : from.points) {
    real best = std::numeric_limits<real>::infinity();
    for (const auto& b : to.points) {
      const real dd = (a[0] - b[0]) * spacing[0];
      const real dh = (a[1] - b[1]) * spacing[1];
      const real dw = (a[2] - b[2]) * spacing[2];
      best = std::min(best, dd * dd + dh * dh + dw * dw);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

}  // namespace

SurfaceDistances hd95_asd(const SurfaceSet& pred, const SurfaceSet& gt,
                          const std::array<real, 3>& spacing,
                          const std::array<int, 3>& dims, Hd95Mode mode) {
  SurfaceDistances r;
  r.empty_pred = pred.points.empty();
  r.empty_gt = gt.points.empty();
  if (r.empty_pred || r.empty_gt) {
    real diag2 = 0;
    for (int a = 0; a < 3; ++a) diag2 += (dims[a] * spacing[a]) * (dims[a] * spacing[a]);
    r.hd95 = r.asd = std::sqrt(diag2);
    return r;
  }
  std::vector<real> pg = directed_distances(pred, gt, spacing);
  std::vector<real> gp = directed_distances(gt, pred, spacing);
  if (mode == Hd95Mode::MaxOfDirected) {
    r.hd95 = std::max(percentile95(pg), percentile95(gp));
  } else {
    std::vector<real> pooled(pg);
    pooled.insert(pooled.end(), gp.begin(), gp.end());
    r.hd95 = percentile95(std::move(pooled));
  }
  real sum = 0;
  for (const real d : pg) sum += d;
  for (const real d : gp) sum += d;
  r.asd = sum / static_cast<real>(pg.size() + gp.size());
  return r;
}

std::vector<MetricsRecord> evaluate_volume(const std::string& id, const LabelMap& pred,
                                           const LabelMap& gt,
                                           const std::array<real, 3>& spacing,
                                           Hd95Mode mode) {
  if (pred.classes != gt.classes)
    throw ShapeError("evaluate_volume: class count mismatch");
  std::vector<MetricsRecord> out;
  for (int c = 1; c < gt.classes; ++c) {
    MetricsRecord r;
    r.volume_id = id;
    r.class_id = c;
    std::tie(r.dice, r.jaccard) = dice_jaccard(pred, gt, c);
    const SurfaceDistances sd =
        hd95_asd(extract_surface(pred, c), extract_surface(gt, c), spacing, gt.dims, mode);
    r.hd95 = sd.hd95;
    r.asd = sd.asd;
    r.empty_pred = sd.empty_pred;
    r.empty_gt = sd.empty_gt;
    out.push_back(std::move(r));
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::ostringstream os;
  os << "volume_id,class,dice,jaccard,hd95,asd,empty_pred,empty_gt\n";
  os.precision(9);
  std::map<int, std::array<real, 4>> sums;
  std::map<int, int> counts;
  for (const auto& r : records) {
    os << r.volume_id << ',' << r.class_id << ',' << r.dice << ',' << r.jaccard << ','
       << r.hd95 << ',' << r.asd << ',' << (r.empty_pred ? 1 : 0) << ','
       << (r.empty_gt ? 1 : 0) << '\n';
    auto& s = sums[r.class_id];
    s[0] += r.dice;
    s[1] += r.jaccard;
    s[2] += r.hd95;
    s[3] += r.asd;
    counts[r.class_id]++;
  }
  for (const auto& [cls, s] : sums) {
    const int n = counts[cls];
    os << "mean," << cls << ',' << s[0] / n << ',' << s[1] / n << ',' << s[2] / n << ','
       << s[3] / n << ",0,0\n";
  }
  return os.str();
}

}  // namespace graphcl
