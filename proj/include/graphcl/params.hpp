#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "graphcl/autodiff.hpp"
#include "graphcl/tensor.hpp"

namespace graphcl {

// Ordered name -> Tensor map; iteration order is insertion order, which keeps
// optimizer updates and checkpoints deterministic.
class ParamStore {
 public:
  std::string role = "student";
  std::int64_t iteration = 0;

  void add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return items_.size(); }

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  // Throws if the two stores differ in name or shape sets.
  void require_aligned(const ParamStore& other) const;

  std::int64_t scalar_count() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Binds ParamStore entries to tape leaves (one leaf per name per tape) and
// collects gradients back out after Tape::backward.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParamStore& store, bool track_grads = true)
      : tape_(tape), store_(store), track_(track_grads) {}

  NodePtr operator()(const std::string& name);

  // Gradients for every bound parameter, zero tensors where backward never
  // reached. Names not bound in this tape are absent.
  ParamStore collect_grads() const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  bool track_;
  std::vector<std::pair<std::string, NodePtr>> bound_;
  std::unordered_map<std::string, std::size_t> bound_index_;
};

// Checkpoint: <prefix>.ckpt.json manifest + <prefix>.ckpt.bin little-endian
// f32 blobs. Written atomically (temp file + rename).
void save_checkpoint(const ParamStore& store, const std::filesystem::path& prefix,
                     const std::vector<std::string>& train_ids = {});
ParamStore load_checkpoint(const std::filesystem::path& prefix,
                           std::vector<std::string>* train_ids = nullptr);

}  // namespace graphcl
