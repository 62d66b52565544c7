#include "graphcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "graphcl/bcpmix.hpp"

namespace graphcl {

void TrainConfig::validate() const {
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("alpha: must be in [0,1]");
  if (kappa < 0) throw ConfigError("kappa: must be >= 0");
  if (tau <= 0) throw ConfigError("tau: must be > 0");
  if (!(lambda_ema >= 0 && lambda_ema <= 1))
    throw ConfigError("lambda_ema: must be in [0,1]");
  if (batch_size < 4 || batch_size % 2 != 0)
    throw ConfigError("batch_size: must be even and >= 4");
  if (zero_ratio < 0 || zero_ratio > 1) throw ConfigError("zero_ratio: must be in [0,1]");
  if (c_max < 1) throw ConfigError("c_max: must be >= 1");
  if (levels < 2) throw ConfigError("levels: must be >= 2");
  if (gcn_level < 0 || gcn_level > levels)
    throw ConfigError("gcn_level: must be in [1, levels] (0 = deepest)");
  if (lr_period <= 0) throw ConfigError("lr_period: must be > 0");
  if (iters_pretrain < 0 || iters_selftrain < 0)
    throw ConfigError("iteration budgets must be >= 0");
  if (optimizer != "sgd" && optimizer != "adam")
    throw ConfigError("optimizer: must be sgd or adam");
  if (mask_resample != "iteration" && mask_resample != "epoch")
    throw ConfigError("mask_resample: must be iteration or epoch");
  if (sa_graph_scope != "full" && sa_graph_scope != "half")
    throw ConfigError("sa_graph_scope: must be full or half");
  if (sa_graph_scope == "half" && batch_size < 8)
    throw ConfigError("sa_graph_scope=half needs batch_size >= 8 (>= 2 samples per stream)");
  if (seg_loss_mix < 0 || seg_loss_mix > 1)
    throw ConfigError("seg_loss_mix: must be in [0,1]");
  if (dice_eps <= 0) throw ConfigError("dice_eps: must be > 0");
}

ModelConfig build_model_config(const TrainConfig& cfg, int channels, int depth,
                               int height, int width, int classes) {
  cfg.validate();
  ModelConfig m;
  m.backbone.levels = cfg.levels;
  m.backbone.base_channels = cfg.base_channels;
  m.backbone.classes = classes;
  m.backbone.in_channels = channels;
  m.backbone.mode3d = depth > 1;
  m.backbone.gcn_level = cfg.effective_gcn_level();
  const int div = 1 << (cfg.levels - 1);
  if (height % div || width % div || (m.backbone.mode3d && depth % div))
    throw ConfigError("spatial dims must be divisible by 2^(levels-1)=" +
                      std::to_string(div));
  m.sa.score_dim = cfg.score_dim;
  m.sa.feature_channels = m.backbone.channels_at(m.backbone.gcn_level);
  m.cluster.tau = cfg.tau;
  m.cluster.c_max = cfg.c_max;
  m.cluster.feature_dim = m.backbone.channels_at(cfg.levels);
  m.cluster.normalize = cfg.cc_normalize;
  return m;
}

std::uint64_t param_hash(const ParamStore& store) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, t] : store.items()) {
    for (const char c : name) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 1099511628211ULL;
    }
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.data.data());
    for (std::int64_t i = 0; i < t.size() * static_cast<std::int64_t>(sizeof(real)); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

TrainState init_state(const DatasetSplit& split, const TrainConfig& cfg) {
  cfg.validate();
  if (split.labeled.size() < 2)
    throw ConfigError("init_state: need at least 2 labeled volumes");
  const Volume& v0 = split.labeled[0].first;
  TrainState st;
  st.model = build_model_config(cfg, v0.channels(), v0.depth(), v0.height(), v0.width(),
                                split.labeled[0].second.classes);
  Rng init = make_substream(cfg.seed, "init");
  init_backbone_params(st.student, st.model.backbone, init);
  init_structalign_params(st.student, st.model.sa, init);
  init_graphcluster_params(st.student, st.model.cluster, init);
  st.student.role = "student";
  st.teacher = st.student;
  st.teacher.role = "teacher";
  st.opt = make_optimizer(cfg.optimizer, cfg.momentum);
  st.rng_mask = make_substream(cfg.seed, "mask");
  st.rng_batch = make_substream(cfg.seed, "batch");
  st.teacher_hash = param_hash(st.teacher);
  return st;
}

void ema_update(ParamStore& teacher, const ParamStore& student, real lambda) {
  teacher.require_aligned(student);
  if (lambda == 1.0) return;  // bitwise freeze
  for (std::size_t i = 0; i < teacher.items().size(); ++i) {
    Tensor& t = teacher.items()[i].second;
    const Tensor& s = student.items()[i].second;
    if (lambda == 0.0) {
      t.data = s.data;  // bitwise copy
    } else {
      t.data = lambda * t.data + (1.0 - lambda) * s.data;
    }
  }
}

LabelMap pseudo_label(const Tensor& logits) {
  if (logits.ndim() != 4) throw ShapeError("pseudo_label: logits must be rank-4");
  if (!logits.all_finite()) throw NumericError("pseudo_label: non-finite logits");
  const int k = logits.shape[0];
  const std::int64_t n =
      static_cast<std::int64_t>(logits.shape[1]) * logits.shape[2] * logits.shape[3];
  LabelMap out;
  out.classes = k;
  out.dims = {logits.shape[1], logits.shape[2], logits.shape[3]};
  out.grid.resize(n);
  for (std::int64_t v = 0; v < n; ++v) {
    if (k == 2) {
      // p(class1) >= 0.5  <=>  z1 >= z0 (threshold inclusive)
      out.grid[v] = logits.data[n + v] >= logits.data[v] ? 1 : 0;
    } else {
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (logits.data[c * n + v] > logits.data[best * n + v]) best = c;
      out.grid[v] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

namespace {

// In-place flip/rot90 augmentation, identical on volume and (optional) label.
void flip_axis(Tensor& t, int axis /* 1=D 2=H 3=W */) {
  const int C = t.shape[0], D = t.shape[1], H = t.shape[2], W = t.shape[3];
  Tensor src = t;
  for (int c = 0; c < C; ++c)
    for (int d = 0; d < D; ++d)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const int sd = axis == 1 ? D - 1 - d : d;
          const int sh = axis == 2 ? H - 1 - h : h;
          const int sw = axis == 3 ? W - 1 - w : w;
          t.data[((static_cast<std::int64_t>(c) * D + d) * H + h) * W + w] =
              src.data[((static_cast<std::int64_t>(c) * D + sd) * H + sh) * W + sw];
        }
}

void rot90_hw(Tensor& t) {  // requires H == W
  const int C = t.shape[0], D = t.shape[1], H = t.shape[2], W = t.shape[3];
  Tensor src = t;
  for (int c = 0; c < C; ++c)
    for (int d = 0; d < D; ++d)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          t.data[((static_cast<std::int64_t>(c) * D + d) * H + h) * W + w] =
              src.data[((static_cast<std::int64_t>(c) * D + d) * H + (W - 1 - w)) * W + h];
}

Tensor label_as_tensor(const LabelMap& l) {
  Tensor t({1, l.dims[0], l.dims[1], l.dims[2]});
  for (std::int64_t i = 0; i < l.voxels(); ++i) t.data[i] = l.grid[i];
  return t;
}

void tensor_as_label(const Tensor& t, LabelMap& l) {
  for (std::int64_t i = 0; i < l.voxels(); ++i)
    l.grid[i] = static_cast<std::uint8_t>(std::lround(t.data[i]));
}

struct AugmentDraw {
  bool flip_h = false, flip_w = false;
  int rot = 0;
};

AugmentDraw draw_augment(Rng& rng, bool square) {
  AugmentDraw a;
  a.flip_h = rng.uniform_index(2) == 1;
  a.flip_w = rng.uniform_index(2) == 1;
  a.rot = square ? static_cast<int>(rng.uniform_index(4)) : 0;
  return a;
}

void apply_augment(const AugmentDraw& a, Tensor& t) {
  if (a.flip_h) flip_axis(t, 2);
  if (a.flip_w) flip_axis(t, 3);
  for (int r = 0; r < a.rot; ++r) rot90_hw(t);
}

void augment_sample(Rng& rng, Volume& v, LabelMap* l) {
  const AugmentDraw a = draw_augment(rng, v.height() == v.width());
  apply_augment(a, v.data);
  if (l) {
    Tensor lt = label_as_tensor(*l);
    apply_augment(a, lt);
    tensor_as_label(lt, *l);
  }
}

std::vector<int> draw_distinct(Rng& rng, int n, int count) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  std::vector<int> out;
  for (int i = 0; i < count; ++i) out.push_back(idx[i % n]);
  return out;
}

}  // namespace

void pretrain(TrainState& st, const DatasetSplit& split, const TrainConfig& cfg,
              std::ostream* log) {
  const int per_iter = 2;
  for (std::int64_t it = 0; it < cfg.iters_pretrain; ++it) {
    const std::vector<int> pick =
        draw_distinct(st.rng_batch, static_cast<int>(split.labeled.size()), per_iter);
    std::vector<std::pair<Volume, LabelMap>> batch;
    for (const int i : pick) {
      auto sample = split.labeled[i];
      if (cfg.augment) augment_sample(st.rng_batch, sample.first, &sample.second);
      batch.push_back(std::move(sample));
    }
    if (cfg.pretrain_bcp && batch.size() >= 2) {
      // Optional labeled-labeled copy-paste (off by default).
      const std::array<int, 3> dims = {batch[0].first.depth(), batch[0].first.height(),
                                       batch[0].first.width()};
      const std::array<real, 3> ratio = {dims[0] == 1 ? real(1) : cfg.zero_ratio,
                                         cfg.zero_ratio, cfg.zero_ratio};
      MixMask m = gen_mask(dims, ratio, st.rng_mask);
      Volume xm = mix_pair(batch[0].first, batch[1].first, m, MixDirection::In);
      LabelMap ym = mix_labels(batch[0].second, batch[1].second, m, MixDirection::In);
      batch[0] = {std::move(xm), std::move(ym)};
    }
    Tape tape;
    ParamBinder bind(tape, st.student);
    std::vector<NodePtr> losses;
    Tensor ones;
    for (const auto& [vol, lbl] : batch) {
      NodePtr x = tape.constant(vol.data);
      BackboneOut o = backbone_forward(tape, x, bind, st.model.backbone);
      Tensor w = Tensor::full({lbl.dims[0], lbl.dims[1], lbl.dims[2]}, 1.0);
      losses.push_back(seg_loss_weighted(tape, o.logits, lbl, std::move(w), cfg.seg_cfg()));
    }
    NodePtr loss = weighted_sum(tape, losses,
                                std::vector<real>(losses.size(), 1.0 / losses.size()));
    if (!std::isfinite(loss->val.data[0]))
      throw NumericError("pretrain: non-finite loss at iteration " + std::to_string(it));
    tape.backward(loss);
    st.opt->step(st.student, bind.collect_grads(),
                 lr_schedule(it, cfg.base_lr, cfg.lr_decay, cfg.lr_period));
    if (log) {
      std::ostringstream os;
      os.precision(17);
      os << "{\"iter\":" << it << ",\"loss\":" << loss->val.data[0] << "}";
      *log << os.str() << '\n';
    }
  }
  st.teacher = st.student;
  st.teacher.role = "teacher";
  st.iteration = cfg.iters_pretrain;
  st.teacher.iteration = cfg.iters_pretrain;
  st.student.iteration = cfg.iters_pretrain;
  st.teacher_hash = param_hash(st.teacher);
  st.pretrained = true;
}

LossReport selftrain_step(TrainState& st, const DatasetSplit& split,
                          const TrainConfig& cfg) {
  if (!st.pretrained) throw ConfigError("selftrain_step: state is not pretrained");
  const int streams = cfg.batch_size / 2;  // mixed student samples per iteration
  const std::vector<int> lab =
      draw_distinct(st.rng_batch, static_cast<int>(split.labeled.size()), streams);
  const std::vector<int> unl =
      draw_distinct(st.rng_batch, static_cast<int>(split.unlabeled.size()), streams);

  struct Stream {
    Volume x;
    LabelMap y;
    MixMask mask;
    MixDirection dir;
  };
  std::vector<Stream> mixed;

  const Volume& ref = split.labeled[0].first;
  const std::array<int, 3> dims = {ref.depth(), ref.height(), ref.width()};
  const std::array<real, 3> ratio = {dims[0] == 1 ? real(1) : cfg.zero_ratio,
                                     cfg.zero_ratio, cfg.zero_ratio};
  // "epoch" resampling refreshes the shared mask once per pass over the
  // labeled set; "iteration" draws a fresh mask for every in/out pair.
  const std::int64_t epoch_len =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(split.labeled.size()));
  if (cfg.mask_resample == "epoch" &&
      (!st.epoch_mask_valid || (st.iteration - cfg.iters_pretrain) % epoch_len == 0)) {
    st.epoch_mask = gen_mask(dims, ratio, st.rng_mask);
    st.epoch_mask_valid = true;
  }

  for (int i = 0; i < streams; i += 2) {
    const MixMask m = cfg.mask_resample == "epoch" ? st.epoch_mask
                                                   : gen_mask(dims, ratio, st.rng_mask);
    for (int j = i; j < std::min(i + 2, streams); ++j) {
      auto labeled = split.labeled[lab[j]];
      Volume unlabeled = split.unlabeled[unl[j]];
      if (cfg.augment) {
        augment_sample(st.rng_batch, labeled.first, &labeled.second);
        augment_sample(st.rng_batch, unlabeled, nullptr);
      }
      // Teacher forward on the (augmented) unlabeled volume -> pseudo-label.
      const Tensor tlogits = eval_forward(st.teacher, unlabeled, cfg, st.model);
      LabelMap pseudo = pseudo_label(tlogits);
      const MixDirection dir = (j - i == 0) ? MixDirection::In : MixDirection::Out;
      Stream s;
      s.dir = dir;
      s.mask = m;
      s.x = mix_pair(labeled.first, unlabeled, m, dir);
      s.y = mix_labels(labeled.second, pseudo, m, dir);
      mixed.push_back(std::move(s));
    }
  }

  // Student forward over the mixed batch.
  Tape tape;
  ParamBinder bind(tape, st.student);
  std::vector<std::vector<NodePtr>> encs;
  for (const auto& s : mixed)
    encs.push_back(backbone_encode(tape, tape.constant(s.x.data), bind,
                                   st.model.backbone));
  const int tap = st.model.backbone.gcn_level - 1;
  if (cfg.sa_enabled) {
    if (cfg.sa_graph_scope == "half") {
      std::vector<std::size_t> in_ix, out_ix;
      for (std::size_t i = 0; i < mixed.size(); ++i)
        (mixed[i].dir == MixDirection::In ? in_ix : out_ix).push_back(i);
      for (const auto* group : {&in_ix, &out_ix}) {
        std::vector<NodePtr> maps;
        for (const auto i : *group) maps.push_back(encs[i][tap]);
        std::vector<NodePtr> merged = structure_aware_transform(tape, maps, bind, st.model.sa);
        for (std::size_t j = 0; j < group->size(); ++j) encs[(*group)[j]][tap] = merged[j];
      }
    } else {
      std::vector<NodePtr> maps;
      for (const auto& e : encs) maps.push_back(e[tap]);
      std::vector<NodePtr> merged = structure_aware_transform(tape, maps, bind, st.model.sa);
      for (std::size_t i = 0; i < encs.size(); ++i) encs[i][tap] = merged[i];
    }
  }

  std::vector<NodePtr> in_losses, out_losses, cc_losses;
  real wsum_in = 0, wsum_out = 0;
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    NodePtr logits = backbone_decode(tape, encs[i], bind, st.model.backbone);
    const Stream& s = mixed[i];
    if (s.dir == MixDirection::In) {
      in_losses.push_back(loss_in(tape, logits, s.y, s.mask, cfg.alpha, cfg.seg_cfg()));
      wsum_in += mask_weights_in(s.mask, cfg.alpha).data.sum();
    } else {
      out_losses.push_back(loss_out(tape, logits, s.y, s.mask, cfg.alpha, cfg.seg_cfg()));
      wsum_out += mask_weights_out(s.mask, cfg.alpha).data.sum();
    }
    if (cfg.cc_enabled) {
      // Patch nodes: pool the deepest map down to at most 8 per spatial axis
      // so the graph stays at patch granularity regardless of resolution.
      NodePtr deep = encs[i][st.model.backbone.levels - 1];
      while (deep->val.shape[2] > 8 || deep->val.shape[3] > 8)
        deep = maxpool2(tape, deep, deep->val.shape[1] > 8);
      NodePtr f = spatial_to_rows(tape, deep);
      cc_losses.push_back(cluster_loss(tape, f, bind, st.model.cluster));
    }
  }
  auto mean_of = [&tape](const std::vector<NodePtr>& v) {
    return weighted_sum(tape, v, std::vector<real>(v.size(), 1.0 / v.size()));
  };
  NodePtr l_in = mean_of(in_losses);
  NodePtr l_out = mean_of(out_losses);
  std::vector<NodePtr> terms = {l_in, l_out};
  std::vector<real> coeffs = {1.0, 1.0};
  NodePtr l_cc;
  if (cfg.cc_enabled) {
    l_cc = mean_of(cc_losses);
    terms.push_back(l_cc);
    coeffs.push_back(cfg.kappa);
  }
  NodePtr l_all = weighted_sum(tape, terms, coeffs);
  if (!std::isfinite(l_all->val.data[0]))
    throw NumericError("selftrain: non-finite loss at iteration " +
                       std::to_string(st.iteration));
  tape.backward(l_all);
  st.opt->step(st.student, bind.collect_grads(),
               lr_schedule(st.iteration - cfg.iters_pretrain, cfg.base_lr, cfg.lr_decay,
                           cfg.lr_period));

  // Audit: teacher parameters may only move through ema_update.
  if (param_hash(st.teacher) != st.teacher_hash)
    throw NumericError("selftrain: teacher parameters changed outside ema_update");
  ema_update(st.teacher, st.student, cfg.lambda_ema);
  st.teacher_hash = param_hash(st.teacher);
  ++st.iteration;
  st.student.iteration = st.iteration;
  st.teacher.iteration = st.iteration;

  LossReport r = total_loss(l_in->val.data[0], l_out->val.data[0],
                            cfg.cc_enabled ? std::optional<real>(l_cc->val.data[0])
                                           : std::nullopt,
                            cfg.kappa, cfg.alpha);
  r.weight_sum_in = wsum_in;
  r.weight_sum_out = wsum_out;
  return r;
}

std::string loss_report_json(std::int64_t iter, const LossReport& r, real lr) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"iter\":" << iter << ",\"l_in\":" << r.l_in << ",\"l_out\":" << r.l_out;
  if (r.has_cc) os << ",\"l_cc\":" << r.l_cc;
  os << ",\"l_all\":" << r.l_all << ",\"lr\":" << lr << "}";
  return os.str();
}

void run_selftrain(TrainState& st, const DatasetSplit& split, const TrainConfig& cfg,
                   std::ostream& log,
                   const std::optional<std::filesystem::path>& ckpt_dir) {
  for (std::int64_t it = 0; it < cfg.iters_selftrain; ++it) {
    const real lr =
        lr_schedule(st.iteration - cfg.iters_pretrain, cfg.base_lr, cfg.lr_decay,
                    cfg.lr_period);
    const LossReport r = selftrain_step(st, split, cfg);
    log << loss_report_json(it, r, lr) << '\n';
    if (ckpt_dir && cfg.checkpoint_interval > 0 && (it + 1) % cfg.checkpoint_interval == 0 &&
        it + 1 < cfg.iters_selftrain) {
      save_checkpoint(st.student, *ckpt_dir / ("student_" + std::to_string(it + 1)));
      save_checkpoint(st.teacher, *ckpt_dir / ("teacher_" + std::to_string(it + 1)));
    }
  }
}

Tensor eval_forward(const ParamStore& params, const Volume& v, const TrainConfig& cfg,
                    const ModelConfig& model) {
  Tape tape;
  ParamBinder bind(tape, params, /*track_grads=*/false);
  NodePtr x = tape.constant(v.data);
  std::vector<NodePtr> enc = backbone_encode(tape, x, bind, model.backbone);
  if (cfg.sa_enabled) {
    const int tap = model.backbone.gcn_level - 1;
    std::vector<NodePtr> maps = {enc[tap]};
    std::vector<NodePtr> merged =
        structure_aware_transform(tape, maps, bind, model.sa, /*allow_singleton=*/true);
    enc[tap] = merged[0];
  }
  return backbone_decode(tape, enc, bind, model.backbone)->val;
}

}  // namespace graphcl
