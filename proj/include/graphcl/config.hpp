#pragma once

#include <filesystem>
#include <string>

#include "graphcl/segmetrics.hpp"
#include "graphcl/trainer.hpp"
#include "graphcl/volume.hpp"

namespace graphcl {

// One plain-text JSON document driving every command. Unknown keys are
// rejected; defaults match the paper settings (alpha 0.5, kappa 0.01, tau 2,
// zero_ratio 2/3, lambda 0.99, C_max 8).
struct RunConfig {
  TrainConfig train;
  std::string data_dir = "data";
  std::string out_dir = "out";
  real labeled_ratio = 0.05;
  std::string eval_net = "teacher";  // teacher | student
  bool allow_train_eval = false;
  std::string hd95_mode = "max";  // max | pooled
  PhantomSpec phantom;
  bool has_phantom = false;

  Hd95Mode hd95() const {
    return hd95_mode == "pooled" ? Hd95Mode::Pooled : Hd95Mode::MaxOfDirected;
  }
  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& cfg);

PhantomSpec parse_phantom_spec(const std::string& json_text);
PhantomSpec load_phantom_spec(const std::filesystem::path& path);
std::string serialize_phantom_spec(const PhantomSpec& spec);

}  // namespace graphcl
