#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>

#include "graphcl/backbone.hpp"
#include "graphcl/graphcluster.hpp"
#include "graphcl/losses.hpp"
#include "graphcl/optim.hpp"
#include "graphcl/structalign.hpp"
#include "graphcl/volume.hpp"

namespace graphcl {

struct TrainConfig {
  real alpha = 0.5;
  real kappa = 0.01;
  real tau = 2.0;
  real lambda_ema = 0.99;
  real base_lr = 0.01;
  real lr_decay = 0.9;
  std::int64_t lr_period = 2500;
  std::int64_t iters_pretrain = 300;
  std::int64_t iters_selftrain = 600;
  int batch_size = 4;
  real zero_ratio = 2.0 / 3.0;
  int c_max = 8;
  int levels = 3;
  int base_channels = 8;
  int gcn_level = 0;  // 0 = deepest
  int score_dim = 16;
  std::uint64_t seed = 1;
  bool sa_enabled = true;
  bool cc_enabled = true;
  std::string optimizer = "sgd";
  real momentum = 0.9;
  bool augment = true;
  bool pretrain_bcp = false;
  std::string mask_resample = "iteration";  // iteration | epoch
  std::string sa_graph_scope = "full";      // full | half
  bool cc_normalize = false;
  real seg_loss_mix = 0.5;
  real dice_eps = 1e-5;
  std::int64_t checkpoint_interval = 200;

  void validate() const;
  int effective_gcn_level() const { return gcn_level == 0 ? levels : gcn_level; }
  SegLossConfig seg_cfg() const { return {seg_loss_mix, dice_eps}; }
};

struct ModelConfig {
  BackboneConfig backbone;
  StructAlignConfig sa;
  GraphClusterConfig cluster;
};

// Derives the per-module configs from data dims; checks pool divisibility.
ModelConfig build_model_config(const TrainConfig& cfg, int channels, int depth,
                               int height, int width, int classes);

struct TrainState {
  ParamStore student;
  ParamStore teacher;
  std::unique_ptr<Optimizer> opt;
  std::int64_t iteration = 0;
  ModelConfig model;
  Rng rng_mask{0};
  Rng rng_batch{0};
  std::uint64_t teacher_hash = 0;  // audit: teacher only moves via EMA
  bool pretrained = false;
  MixMask epoch_mask;  // used when mask_resample == "epoch"
  bool epoch_mask_valid = false;
};

TrainState init_state(const DatasetSplit& split, const TrainConfig& cfg);

// theta_t <- lambda * theta_t + (1 - lambda) * theta_s, elementwise.
void ema_update(ParamStore& teacher, const ParamStore& student, real lambda);

std::uint64_t param_hash(const ParamStore& store);

// k=2: class 1 where p >= 0.5; k>2: argmax with lowest-index tie-break.
LabelMap pseudo_label(const Tensor& logits);

// Supervised phase on labeled pairs; teacher ends as an exact student copy.
void pretrain(TrainState& state, const DatasetSplit& split, const TrainConfig& cfg,
              std::ostream* log = nullptr);

LossReport selftrain_step(TrainState& state, const DatasetSplit& split,
                          const TrainConfig& cfg);

// Runs iters_selftrain steps; JSON-lines log and periodic checkpoints.
void run_selftrain(TrainState& state, const DatasetSplit& split, const TrainConfig& cfg,
                   std::ostream& log,
                   const std::optional<std::filesystem::path>& ckpt_dir = std::nullopt);

// Inference forward (no gradients); SA runs as a single-node graph when on.
Tensor eval_forward(const ParamStore& params, const Volume& v, const TrainConfig& cfg,
                    const ModelConfig& model);

std::string loss_report_json(std::int64_t iter, const LossReport& r, real lr);

}  // namespace graphcl
