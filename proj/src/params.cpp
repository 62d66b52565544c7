#include "graphcl/params.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace graphcl {

using json = nlohmann::ordered_json;

void ParamStore::add(const std::string& name, Tensor t) {
  if (has(name)) throw ConfigError("ParamStore: duplicate parameter '" + name + "'");
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(t));
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("uninitialized parameter '" + name + "'");
  return items_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("uninitialized parameter '" + name + "'");
  return items_[it->second].second;
}

void ParamStore::require_aligned(const ParamStore& other) const {
  if (items_.size() != other.items_.size())
    throw ConfigError("ParamStore: stores not aligned (size mismatch)");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].first != other.items_[i].first ||
        items_[i].second.shape != other.items_[i].second.shape)
      throw ConfigError("ParamStore: stores not aligned at '" + items_[i].first + "'");
  }
}

std::int64_t ParamStore::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

NodePtr ParamBinder::operator()(const std::string& name) {
  auto it = bound_index_.find(name);
  if (it != bound_index_.end()) return bound_[it->second].second;
  const Tensor& t = store_.at(name);
  NodePtr node = track_ ? tape_.param(t) : tape_.constant(t);
  bound_index_[name] = bound_.size();
  bound_.emplace_back(name, node);
  return node;
}

ParamStore ParamBinder::collect_grads() const {
  ParamStore grads;
  grads.role = store_.role;
  for (const auto& [name, node] : bound_) {
    Tensor g = node->grad.size() ? node->grad : Tensor::zeros(node->val.shape);
    grads.add(name, std::move(g));
  }
  return grads;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& prefix,
                     const std::vector<std::string>& train_ids) {
  const std::filesystem::path jpath = prefix.string() + ".ckpt.json";
  const std::filesystem::path bpath = prefix.string() + ".ckpt.bin";
  json manifest;
  manifest["iteration"] = store.iteration;
  manifest["role"] = store.role;
  manifest["params"] = json::array();
  std::vector<float> blob;
  std::int64_t offset = 0;
  for (const auto& [name, t] : store.items()) {
    manifest["params"].push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    for (std::int64_t i = 0; i < t.size(); ++i) blob.push_back(static_cast<float>(t.data[i]));
    offset += t.size() * static_cast<std::int64_t>(sizeof(float));
  }
  if (!train_ids.empty()) manifest["train_ids"] = train_ids;

  const auto btmp = bpath.string() + ".tmp";
  {
    std::ofstream out(btmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint blob: " + bpath.string());
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
  }
  std::filesystem::rename(btmp, bpath);
  const auto jtmp = jpath.string() + ".tmp";
  {
    std::ofstream out(jtmp);
    if (!out) throw IoError("cannot write checkpoint manifest: " + jpath.string());
    out << manifest.dump(2) << '\n';
  }
  std::filesystem::rename(jtmp, jpath);
}

ParamStore load_checkpoint(const std::filesystem::path& prefix,
                           std::vector<std::string>* train_ids) {
  const std::filesystem::path jpath = prefix.string() + ".ckpt.json";
  const std::filesystem::path bpath = prefix.string() + ".ckpt.bin";
  std::ifstream jin(jpath);
  if (!jin) throw IoError("missing checkpoint manifest: " + jpath.string());
  json manifest;
  try {
    jin >> manifest;
  } catch (const json::exception& e) {
    throw IoError("bad checkpoint manifest " + jpath.string() + ": " + e.what());
  }
  std::ifstream bin(bpath, std::ios::binary);
  if (!bin) throw IoError("missing checkpoint blob: " + bpath.string());
  std::vector<char> raw{std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>()};

  ParamStore store;
  try {
    store.iteration = manifest.at("iteration").get<std::int64_t>();
    store.role = manifest.at("role").get<std::string>();
    for (const auto& p : manifest.at("params")) {
      const auto name = p.at("name").get<std::string>();
      const auto shape = p.at("shape").get<std::vector<int>>();
      const auto offset = p.at("offset").get<std::int64_t>();
      Tensor t(shape);
      const std::int64_t bytes = t.size() * static_cast<std::int64_t>(sizeof(float));
      if (offset < 0 || offset + bytes > static_cast<std::int64_t>(raw.size()))
        throw IoError("checkpoint blob too short for '" + name + "' in " + bpath.string());
      const float* f32 = reinterpret_cast<const float*>(raw.data() + offset);
      for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] = f32[i];
      store.add(name, std::move(t));
    }
    if (train_ids && manifest.contains("train_ids"))
      *train_ids = manifest.at("train_ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IoError("bad checkpoint manifest " + jpath.string() + ": " + e.what());
  }
  return store;
}

}  // namespace graphcl
