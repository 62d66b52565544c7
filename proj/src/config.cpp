#include "graphcl/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

namespace graphcl {

using json = nlohmann::ordered_json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw ConfigError("unknown config key '" + key + "' in " + where);
}

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

PhantomSpec phantom_from_json(const json& j, const std::string& where) {
  static const std::set<std::string> known = {
      "n_volumes", "shape", "classes", "radius_range", "noise_sigma",
      "contrast", "spacing", "seed"};
  reject_unknown(j, known, where);
  PhantomSpec s;
  get_if(j, "n_volumes", s.n_volumes);
  if (j.contains("shape")) {
    auto v = j.at("shape").get<std::vector<int>>();
    if (v.size() != 3) throw ConfigError("phantom shape must be [D,H,W]");
    s.shape = {v[0], v[1], v[2]};
  }
  get_if(j, "classes", s.classes);
  if (j.contains("radius_range")) {
    auto v = j.at("radius_range").get<std::vector<real>>();
    if (v.size() != 2) throw ConfigError("radius_range must be [lo,hi]");
    s.radius_lo = v[0];
    s.radius_hi = v[1];
  }
  get_if(j, "noise_sigma", s.noise_sigma);
  get_if(j, "contrast", s.contrast);
  if (j.contains("spacing")) {
    auto v = j.at("spacing").get<std::vector<real>>();
    if (v.size() != 3) throw ConfigError("phantom spacing must have 3 entries");
    s.spacing = {v[0], v[1], v[2]};
  }
  get_if(j, "seed", s.seed);
  s.validate();
  return s;
}

json phantom_to_json(const PhantomSpec& s) {
  json j;
  j["n_volumes"] = s.n_volumes;
  j["shape"] = s.shape;
  j["classes"] = s.classes;
  j["radius_range"] = {s.radius_lo, s.radius_hi};
  j["noise_sigma"] = s.noise_sigma;
  j["contrast"] = s.contrast;
  j["spacing"] = s.spacing;
  j["seed"] = s.seed;
  return j;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (!(labeled_ratio > 0 && labeled_ratio < 1))
    throw ConfigError("labeled_ratio: must be in (0,1)");
  if (eval_net != "teacher" && eval_net != "student")
    throw ConfigError("eval_net: must be teacher or student");
  if (hd95_mode != "max" && hd95_mode != "pooled")
    throw ConfigError("hd95_mode: must be max or pooled");
  if (has_phantom) phantom.validate();
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  static const std::set<std::string> known = {
      "seed", "data_dir", "out_dir", "labeled_ratio", "alpha", "kappa", "tau",
      "lambda_ema", "base_lr", "lr_decay", "lr_period", "iters_pretrain",
      "iters_selftrain", "batch_size", "zero_ratio", "c_max", "levels",
      "base_channels", "gcn_level", "score_dim", "sa_enabled", "cc_enabled",
      "optimizer", "momentum", "augment", "pretrain_bcp", "mask_resample",
      "sa_graph_scope", "cc_normalize", "seg_loss_mix", "dice_eps",
      "checkpoint_interval", "eval_net", "allow_train_eval", "hd95_mode",
      "phantom"};
  reject_unknown(j, known, "config");
  RunConfig c;
  get_if(j, "seed", c.train.seed);
  get_if(j, "data_dir", c.data_dir);
  get_if(j, "out_dir", c.out_dir);
  get_if(j, "labeled_ratio", c.labeled_ratio);
  get_if(j, "alpha", c.train.alpha);
  get_if(j, "kappa", c.train.kappa);
  get_if(j, "tau", c.train.tau);
  get_if(j, "lambda_ema", c.train.lambda_ema);
  get_if(j, "base_lr", c.train.base_lr);
  get_if(j, "lr_decay", c.train.lr_decay);
  get_if(j, "lr_period", c.train.lr_period);
  get_if(j, "iters_pretrain", c.train.iters_pretrain);
  get_if(j, "iters_selftrain", c.train.iters_selftrain);
  get_if(j, "batch_size", c.train.batch_size);
  get_if(j, "zero_ratio", c.train.zero_ratio);
  get_if(j, "c_max", c.train.c_max);
  get_if(j, "levels", c.train.levels);
  get_if(j, "base_channels", c.train.base_channels);
  get_if(j, "gcn_level", c.train.gcn_level);
  get_if(j, "score_dim", c.train.score_dim);
  get_if(j, "sa_enabled", c.train.sa_enabled);
  get_if(j, "cc_enabled", c.train.cc_enabled);
  get_if(j, "optimizer", c.train.optimizer);
  get_if(j, "momentum", c.train.momentum);
  get_if(j, "augment", c.train.augment);
  get_if(j, "pretrain_bcp", c.train.pretrain_bcp);
  get_if(j, "mask_resample", c.train.mask_resample);
  get_if(j, "sa_graph_scope", c.train.sa_graph_scope);
  get_if(j, "cc_normalize", c.train.cc_normalize);
  get_if(j, "seg_loss_mix", c.train.seg_loss_mix);
  get_if(j, "dice_eps", c.train.dice_eps);
  get_if(j, "checkpoint_interval", c.train.checkpoint_interval);
  get_if(j, "eval_net", c.eval_net);
  get_if(j, "allow_train_eval", c.allow_train_eval);
  get_if(j, "hd95_mode", c.hd95_mode);
  if (j.contains("phantom")) {
    c.phantom = phantom_from_json(j.at("phantom"), "config.phantom");
    c.has_phantom = true;
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_run_config(text);
}

std::string serialize_run_config(const RunConfig& c) {
  json j;
  j["seed"] = c.train.seed;
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["labeled_ratio"] = c.labeled_ratio;
  j["alpha"] = c.train.alpha;
  j["kappa"] = c.train.kappa;
  j["tau"] = c.train.tau;
  j["lambda_ema"] = c.train.lambda_ema;
  j["base_lr"] = c.train.base_lr;
  j["lr_decay"] = c.train.lr_decay;
  j["lr_period"] = c.train.lr_period;
  j["iters_pretrain"] = c.train.iters_pretrain;
  j["iters_selftrain"] = c.train.iters_selftrain;
  j["batch_size"] = c.train.batch_size;
  j["zero_ratio"] = c.train.zero_ratio;
  j["c_max"] = c.train.c_max;
  j["levels"] = c.train.levels;
  j["base_channels"] = c.train.base_channels;
  j["gcn_level"] = c.train.gcn_level;
  j["score_dim"] = c.train.score_dim;
  j["sa_enabled"] = c.train.sa_enabled;
  j["cc_enabled"] = c.train.cc_enabled;
  j["optimizer"] = c.train.optimizer;
  j["momentum"] = c.train.momentum;
  j["augment"] = c.train.augment;
  j["pretrain_bcp"] = c.train.pretrain_bcp;
  j["mask_resample"] = c.train.mask_resample;
  j["sa_graph_scope"] = c.train.sa_graph_scope;
  j["cc_normalize"] = c.train.cc_normalize;
  j["seg_loss_mix"] = c.train.seg_loss_mix;
  j["dice_eps"] = c.train.dice_eps;
  j["checkpoint_interval"] = c.train.checkpoint_interval;
  j["eval_net"] = c.eval_net;
  j["allow_train_eval"] = c.allow_train_eval;
  j["hd95_mode"] = c.hd95_mode;
  if (c.has_phantom) j["phantom"] = phantom_to_json(c.phantom);
  return j.dump(2) + "\n";
}

PhantomSpec parse_phantom_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("phantom spec is not valid JSON: ") + e.what());
  }
  return phantom_from_json(j, "phantom spec");
}

PhantomSpec load_phantom_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open phantom spec: " + path.string());
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_phantom_spec(text);
}

std::string serialize_phantom_spec(const PhantomSpec& spec) {
  return phantom_to_json(spec).dump(2) + "\n";
}

}  // namespace graphcl
