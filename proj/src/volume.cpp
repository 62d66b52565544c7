#include "graphcl/volume.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "graphcl/rng.hpp"

namespace graphcl {

using json = nlohmann::ordered_json;

void Volume::validate() const {
  if (data.ndim() != 4) throw ConfigError("Volume: data must be rank-4 (C,D,H,W)");
  for (const int d : data.shape)
    if (d <= 0) throw ConfigError("Volume: nonpositive dim in " + data.shape_str());
  for (const real s : spacing)
    if (s <= 0) throw ConfigError("Volume: nonpositive spacing");
  if (!data.all_finite()) throw ConfigError("Volume '" + id + "': non-finite entry");
}

void LabelMap::validate() const {
  if (classes < 2) throw ConfigError("LabelMap: classes must be >= 2");
  if (static_cast<std::int64_t>(grid.size()) != voxels())
    throw ConfigError("LabelMap: grid size does not match dims");
  for (const std::uint8_t v : grid)
    if (v >= classes) throw ConfigError("LabelMap: entry out of class range");
}

void PhantomSpec::validate() const {
  if (n_volumes < 1) throw ConfigError("PhantomSpec.n_volumes: must be >= 1");
  for (const int d : shape)
    if (d < 1) throw ConfigError("PhantomSpec.shape: dims must be >= 1");
  if (classes < 2) throw ConfigError("PhantomSpec.classes: must be >= 2");
  if (!(radius_lo > 0 && radius_hi < 0.5 && radius_lo <= radius_hi))
    throw ConfigError("PhantomSpec.radius_range: must satisfy 0 < lo <= hi < 0.5");
  if (noise_sigma < 0) throw ConfigError("PhantomSpec.noise_sigma: must be >= 0");
  if (contrast <= 0) throw ConfigError("PhantomSpec.contrast: must be > 0");
  for (const real s : spacing)
    if (s <= 0) throw ConfigError("PhantomSpec.spacing: must be > 0");
}

std::vector<std::pair<Volume, LabelMap>> generate_phantoms(const PhantomSpec& spec) {
  spec.validate();
  Rng rng = make_substream(spec.seed, "phantom");
  const int D = spec.shape[0], H = spec.shape[1], W = spec.shape[2];
  const int k = spec.classes;
  std::vector<std::pair<Volume, LabelMap>> out;
  out.reserve(spec.n_volumes);
  for (int v = 0; v < spec.n_volumes; ++v) {
    // Jittered center plus one shared radius fraction; axes of extent 1 do
    // not contribute to the ellipsoid distance.
    std::array<real, 3> center;
    for (int a = 0; a < 3; ++a) center[a] = rng.uniform(0.45, 0.55);
    const real radius = rng.uniform(spec.radius_lo, spec.radius_hi);

    Volume vol;
    vol.data = Tensor({1, D, H, W});
    vol.spacing = spec.spacing;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "phantom_%04d", v);
    vol.id = buf;
    LabelMap lbl;
    lbl.classes = k;
    lbl.dims = {D, H, W};
    lbl.grid.assign(vol.data.size(), 0);

    const std::array<int, 3> dims = {D, H, W};
    std::int64_t i = 0;
    for (int d = 0; d < D; ++d)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w, ++i) {
          const std::array<int, 3> pos = {d, h, w};
          real rho2 = 0;
          for (int a = 0; a < 3; ++a) {
            if (dims[a] == 1) continue;
            const real delta = (pos[a] + 0.5 - center[a] * dims[a]) / (radius * dims[a]);
            rho2 += delta * delta;
          }
          const real rho = std::sqrt(rho2);
          // class c occupies rho <= (k-c)/(k-1); innermost shell is smallest
          int cls = 0;
          for (int c = k - 1; c >= 1; --c)
            if (rho <= static_cast<real>(k - c) / (k - 1)) { cls = c; break; }
          lbl.grid[i] = static_cast<std::uint8_t>(cls);
          vol.data.data[i] = cls * spec.contrast;
        }
    if (spec.noise_sigma > 0)
      for (std::int64_t j = 0; j < vol.data.size(); ++j)
        vol.data.data[j] += spec.noise_sigma * rng.normal();
    out.emplace_back(std::move(vol), std::move(lbl));
  }
  return out;
}

void split_indices(int n, real labeled_ratio, std::uint64_t seed,
                   std::vector<int>& labeled, std::vector<int>& unlabeled) {
  if (n < 4) throw ConfigError("split_dataset: dataset too small (need >= 4 volumes)");
  if (!(labeled_ratio > 0 && labeled_ratio < 1))
    throw ConfigError("split_dataset: labeled_ratio must be in (0,1)");
  const int a = std::max<int>(2, static_cast<int>(std::llround(labeled_ratio * n)));
  if (n - a < 2) throw ConfigError("split_dataset: fewer than 2 unlabeled volumes");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  Rng rng = make_substream(seed, "split");
  rng.shuffle(idx);
  labeled.assign(idx.begin(), idx.begin() + a);
  unlabeled.assign(idx.begin() + a, idx.end());
}

DatasetSplit split_dataset(const std::vector<std::pair<Volume, LabelMap>>& data,
                           real labeled_ratio, std::uint64_t seed) {
  std::vector<int> li, ui;
  split_indices(static_cast<int>(data.size()), labeled_ratio, seed, li, ui);
  DatasetSplit split;
  split.seed = seed;
  for (const int i : li) split.labeled.push_back(data[i]);
  for (const int i : ui) split.unlabeled.push_back(data[i].first);
  return split;
}

namespace {

json read_sidecar(const std::filesystem::path& blob) {
  const std::filesystem::path side = blob.string() + ".json";
  std::ifstream in(side);
  if (!in) throw IoError("missing sidecar: " + side.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("bad sidecar " + side.string() + ": " + e.what());
  }
  return j;
}

std::vector<char> read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open blob: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const void* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("short write: " + path.string());
}

}  // namespace

void write_volume(const Volume& v, const std::filesystem::path& path) {
  std::vector<float> f32(v.data.size());
  for (std::int64_t i = 0; i < v.data.size(); ++i) f32[i] = static_cast<float>(v.data.data[i]);
  write_file(path, f32.data(), f32.size() * sizeof(float));
  json side;
  side["shape"] = v.data.shape;
  side["dtype"] = "f32";
  side["order"] = "row-major";
  side["spacing"] = v.spacing;
  std::ofstream out(path.string() + ".json");
  if (!out) throw IoError("cannot write sidecar: " + path.string() + ".json");
  out << side.dump(2) << '\n';
}

Volume read_volume(const std::filesystem::path& path) {
  const json side = read_sidecar(path);
  std::vector<int> shape;
  try {
    shape = side.at("shape").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw IoError("bad sidecar for " + path.string() + ": " + e.what());
  }
  if (shape.size() != 4) throw IoError("volume sidecar shape must have 4 dims: " + path.string());
  const std::vector<char> raw = read_blob(path);
  const std::int64_t expect = Tensor::count(shape) * static_cast<std::int64_t>(sizeof(float));
  if (static_cast<std::int64_t>(raw.size()) != expect)
    throw IoError("length mismatch for " + path.string() + ": blob has " +
                  std::to_string(raw.size()) + " bytes, sidecar implies " +
                  std::to_string(expect));
  Volume v;
  v.data = Tensor(shape);
  const float* f32 = reinterpret_cast<const float*>(raw.data());
  for (std::int64_t i = 0; i < v.data.size(); ++i) v.data.data[i] = f32[i];
  if (side.contains("spacing")) {
    auto sp = side.at("spacing").get<std::vector<real>>();
    if (sp.size() != 3) throw IoError("spacing must have 3 entries: " + path.string());
    v.spacing = {sp[0], sp[1], sp[2]};
  }
  v.id = path.stem().string();
  if (!v.data.all_finite()) throw IoError("non-finite value in " + path.string());
  return v;
}

void write_label(const LabelMap& l, const std::filesystem::path& path) {
  write_file(path, l.grid.data(), l.grid.size());
  json side;
  side["shape"] = l.dims;
  side["classes"] = l.classes;
  std::ofstream out(path.string() + ".json");
  if (!out) throw IoError("cannot write sidecar: " + path.string() + ".json");
  out << side.dump(2) << '\n';
}

LabelMap read_label(const std::filesystem::path& path) {
  const json side = read_sidecar(path);
  LabelMap l;
  try {
    auto dims = side.at("shape").get<std::vector<int>>();
    if (dims.size() != 3) throw IoError("label sidecar shape must have 3 dims: " + path.string());
    l.dims = {dims[0], dims[1], dims[2]};
    l.classes = side.at("classes").get<int>();
  } catch (const json::exception& e) {
    throw IoError("bad sidecar for " + path.string() + ": " + e.what());
  }
  const std::vector<char> raw = read_blob(path);
  if (static_cast<std::int64_t>(raw.size()) != l.voxels())
    throw IoError("length mismatch for " + path.string() + ": blob has " +
                  std::to_string(raw.size()) + " bytes, sidecar implies " +
                  std::to_string(l.voxels()));
  l.grid.assign(raw.begin(), raw.end());
  l.validate();
  return l;
}

}  // namespace graphcl
