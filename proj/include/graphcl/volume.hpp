#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "graphcl/tensor.hpp"

namespace graphcl {

// Dense scalar grid with spacing metadata. Layout is row-major (C,D,H,W);
// 2D volumes use D=1.
struct Volume {
  Tensor data;                      // shape {C,D,H,W}
  std::array<real, 3> spacing{1, 1, 1};  // physical size per (D,H,W) axis
  std::string id;

  int channels() const { return data.shape[0]; }
  int depth() const { return data.shape[1]; }
  int height() const { return data.shape[2]; }
  int width() const { return data.shape[3]; }
  std::int64_t voxels() const {
    return static_cast<std::int64_t>(depth()) * height() * width();
  }
  void validate() const;
};

// Integer class grid over the same spatial dims as its Volume.
struct LabelMap {
  int classes = 2;
  std::array<int, 3> dims{1, 1, 1};  // (D,H,W)
  std::vector<std::uint8_t> grid;

  std::int64_t voxels() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }
  void validate() const;
};

struct DatasetSplit {
  std::vector<std::pair<Volume, LabelMap>> labeled;
  std::vector<Volume> unlabeled;
  std::uint64_t seed = 0;
};

struct PhantomSpec {
  int n_volumes = 40;
  std::array<int, 3> shape{1, 128, 128};  // (D,H,W)
  int classes = 2;
  real radius_lo = 0.2, radius_hi = 0.35;  // fraction of dims
  real noise_sigma = 0.05;
  real contrast = 1.0;
  std::array<real, 3> spacing{1, 1, 1};
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError naming the offending field
};

// Deterministic nested-ellipsoid phantoms: class c sits inside class c-1 on a
// noisy background; labels match the noiseless geometry exactly.
std::vector<std::pair<Volume, LabelMap>> generate_phantoms(const PhantomSpec& spec);

// Seeded shuffle prefix; A = max(2, round(ratio * N)).
void split_indices(int n, real labeled_ratio, std::uint64_t seed,
                   std::vector<int>& labeled, std::vector<int>& unlabeled);

DatasetSplit split_dataset(const std::vector<std::pair<Volume, LabelMap>>& data,
                           real labeled_ratio, std::uint64_t seed);

// Raw f32 blob + JSON sidecar <path>.json; see write_volume for the schema.
Volume read_volume(const std::filesystem::path& path);
void write_volume(const Volume& v, const std::filesystem::path& path);
LabelMap read_label(const std::filesystem::path& path);
void write_label(const LabelMap& l, const std::filesystem::path& path);

}  // namespace graphcl
