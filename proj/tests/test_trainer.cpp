#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "graphcl/gradcheck.hpp"
#include "graphcl/trainer.hpp"

using namespace graphcl;

namespace {

TrainConfig tiny_cfg() {
  TrainConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 4;
  cfg.score_dim = 4;
  cfg.c_max = 4;
  cfg.batch_size = 4;
  cfg.iters_pretrain = 5;
  cfg.iters_selftrain = 3;
  cfg.augment = false;
  cfg.seed = 21;
  return cfg;
}

DatasetSplit tiny_split(std::uint64_t seed = 21) {
  PhantomSpec spec;
  spec.n_volumes = 6;
  spec.shape = {1, 16, 16};
  spec.classes = 2;
  spec.noise_sigma = 0.02;
  spec.seed = seed;
  return split_dataset(generate_phantoms(spec), 0.34, seed);
}

Tensor logits2(std::vector<real> z0, std::vector<real> z1) {
  const int n = static_cast<int>(z0.size());
  Tensor t({2, 1, 1, n});
  for (int i = 0; i < n; ++i) {
    t[i] = z0[i];
    t[n + i] = z1[i];
  }
  return t;
}

}  // namespace

TEST_CASE("pseudo_label binary: argmax with inclusive 0.5 threshold") {
  // probabilities (0.3,0.7) and (0.6,0.4) as logit gaps
  LabelMap l = pseudo_label(logits2({0.3, 0.6}, {0.7, 0.4}));
  CHECK(l.grid == std::vector<std::uint8_t>{1, 0});
  // exact tie means p(class1) = 0.5, which is inclusive
  LabelMap tie = pseudo_label(logits2({1.0}, {1.0}));
  CHECK(tie.grid == std::vector<std::uint8_t>{1});
}

TEST_CASE("pseudo_label multi-class: argmax with lowest-index tie-break") {
  Tensor t({3, 1, 1, 1});
  t[0] = t[1] = t[2] = 0.5;  // uniform
  CHECK(pseudo_label(t).grid == std::vector<std::uint8_t>{0});
  t[1] = 2.0;
  CHECK(pseudo_label(t).grid == std::vector<std::uint8_t>{1});
}

TEST_CASE("pseudo_label rejects non-finite logits") {
  Tensor t({2, 1, 1, 1});
  t[0] = std::numeric_limits<real>::quiet_NaN();
  CHECK_THROWS_AS(pseudo_label(t), NumericError);
}

TEST_CASE("ema_update: lambda 1 freezes, lambda 0 copies, both bitwise") {
  Rng rng(1);
  ParamStore s, t;
  s.add("w", Tensor::normal({5}, rng));
  t.add("w", Tensor::normal({5}, rng));
  ParamStore frozen = t;
  ema_update(t, s, 1.0);
  CHECK((t.at("w").data == frozen.at("w").data).all());
  ema_update(t, s, 0.0);
  CHECK((t.at("w").data == s.at("w").data).all());
}

TEST_CASE("ema_update arithmetic: 1.0 toward 0.0 at lambda 0.99 gives 0.99") {
  ParamStore s, t;
  s.add("w", Tensor::full({1}, 0.0));
  t.add("w", Tensor::full({1}, 1.0));
  ema_update(t, s, 0.99);
  CHECK(t.at("w")[0] == doctest::Approx(0.99).epsilon(1e-15));
}

TEST_CASE("ema_update rejects misaligned stores") {
  ParamStore s, t;
  s.add("w", Tensor::zeros({2}));
  t.add("v", Tensor::zeros({2}));
  CHECK_THROWS_AS(ema_update(t, s, 0.5), ConfigError);
}

TEST_CASE("iters_pretrain=0 leaves teacher as an exact copy of the fresh student") {
  TrainConfig cfg = tiny_cfg();
  cfg.iters_pretrain = 0;
  DatasetSplit split = tiny_split();
  TrainState st = init_state(split, cfg);
  const std::uint64_t before = param_hash(st.student);
  pretrain(st, split, cfg);
  CHECK(param_hash(st.student) == before);
  CHECK(param_hash(st.teacher) == before);
  CHECK(st.pretrained);
}

TEST_CASE("pretrain reduces the supervised loss on the seeded split") {
  TrainConfig cfg = tiny_cfg();
  cfg.iters_pretrain = 60;
  DatasetSplit split = tiny_split();
  TrainState st = init_state(split, cfg);
  std::ostringstream log;
  pretrain(st, split, cfg, &log);
  std::istringstream is(log.str());
  std::string line;
  std::vector<real> losses;
  while (std::getline(is, line)) {
    const auto pos = line.find("\"loss\":");
    losses.push_back(std::stod(line.substr(pos + 7)));
  }
  REQUIRE(losses.size() == 60);
  real early = 0, late = 0;
  for (int i = 0; i < 10; ++i) {
    early += losses[i];
    late += losses[50 + i];
  }
  CHECK(late < early);
}

TEST_CASE("same seed gives bitwise-identical pretrain checkpoints and logs") {
  TrainConfig cfg = tiny_cfg();
  cfg.iters_pretrain = 8;
  auto run = [&] {
    DatasetSplit split = tiny_split();
    TrainState st = init_state(split, cfg);
    std::ostringstream log;
    pretrain(st, split, cfg, &log);
    return std::make_pair(param_hash(st.student), log.str());
  };
  auto [h1, l1] = run();
  auto [h2, l2] = run();
  CHECK(h1 == h2);
  CHECK(l1 == l2);
}

TEST_CASE("selftrain_step requires a pretrained state") {
  TrainConfig cfg = tiny_cfg();
  DatasetSplit split = tiny_split();
  TrainState st = init_state(split, cfg);
  CHECK_THROWS_AS(selftrain_step(st, split, cfg), ConfigError);
}

TEST_CASE("one selftrain step moves the teacher by exactly (1-lambda)(s-t)") {
  TrainConfig cfg = tiny_cfg();
  DatasetSplit split = tiny_split();
  TrainState st = init_state(split, cfg);
  pretrain(st, split, cfg);
  const ParamStore teacher_before = st.teacher;
  selftrain_step(st, split, cfg);
  for (std::size_t i = 0; i < st.teacher.items().size(); ++i) {
    const auto& [name, t_after] = st.teacher.items()[i];
    const Tensor& t_before = teacher_before.items()[i].second;
    const Tensor& s_after = st.student.at(name);
    for (std::int64_t j = 0; j < t_after.size(); ++j) {
      const real expect =
          cfg.lambda_ema * t_before[j] + (1 - cfg.lambda_ema) * s_after[j];
      CHECK(t_after[j] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("teacher only moves through EMA (hash audit survives steps)") {
  TrainConfig cfg = tiny_cfg();
  DatasetSplit split = tiny_split();
  TrainState st = init_state(split, cfg);
  pretrain(st, split, cfg);
  for (int i = 0; i < 2; ++i) selftrain_step(st, split, cfg);
  CHECK(st.teacher_hash == param_hash(st.teacher));
}

TEST_CASE("baseline toggles: report lacks cc and l_all = l_in + l_out") {
  TrainConfig cfg = tiny_cfg();
  cfg.sa_enabled = false;
  cfg.cc_enabled = false;
  DatasetSplit split = tiny_split();
  TrainState st = init_state(split, cfg);
  pretrain(st, split, cfg);
  LossReport r = selftrain_step(st, split, cfg);
  CHECK_FALSE(r.has_cc);
  CHECK(r.l_all == doctest::Approx(r.l_in + r.l_out).epsilon(1e-12));
}

TEST_CASE("baseline trajectory is independent of SA/CC parameter values") {
  TrainConfig cfg = tiny_cfg();
  cfg.sa_enabled = false;
  cfg.cc_enabled = false;
  DatasetSplit split = tiny_split();
  TrainState a = init_state(split, cfg);
  TrainState b = init_state(split, cfg);
  // scramble the unused module blocks in one copy
  for (auto& [name, tensor] : b.student.items())
    if (name.rfind("dsa.", 0) == 0 || name.rfind("sa_", 0) == 0 ||
        name.rfind("gnn.", 0) == 0 || name.rfind("mlp.", 0) == 0)
      tensor.data += 7.0;
  pretrain(a, split, cfg);
  pretrain(b, split, cfg);
  for (int i = 0; i < 2; ++i) {
    selftrain_step(a, split, cfg);
    selftrain_step(b, split, cfg);
  }
  for (const auto& [name, tensor] : a.student.items()) {
    if (name.rfind("dsa.", 0) == 0 || name.rfind("sa_", 0) == 0 ||
        name.rfind("gnn.", 0) == 0 || name.rfind("mlp.", 0) == 0)
      continue;
    CHECK((tensor.data == b.student.at(name).data).all());
  }
}

TEST_CASE("run_selftrain emits one log line per iteration, deterministically") {
  TrainConfig cfg = tiny_cfg();
  auto run = [&] {
    DatasetSplit split = tiny_split();
    TrainState st = init_state(split, cfg);
    pretrain(st, split, cfg);
    std::ostringstream log;
    run_selftrain(st, split, cfg, log);
    return log.str();
  };
  const std::string l1 = run();
  const std::string l2 = run();
  CHECK(l1 == l2);
  std::istringstream is(l1);
  std::string line;
  int count = 0;
  while (std::getline(is, line)) {
    CHECK(line.find("\"l_in\"") != std::string::npos);
    CHECK(line.find("\"l_cc\"") != std::string::npos);  // cc on by default
    ++count;
  }
  CHECK(count == cfg.iters_selftrain);
}

TEST_CASE("eval_forward produces full-resolution logits for one volume") {
  TrainConfig cfg = tiny_cfg();
  DatasetSplit split = tiny_split();
  TrainState st = init_state(split, cfg);
  pretrain(st, split, cfg);
  const Volume& v = split.unlabeled[0];
  Tensor logits = eval_forward(st.teacher, v, cfg, st.model);
  CHECK(logits.shape == std::vector<int>{2, 1, 16, 16});
  CHECK(logits.all_finite());
  // SA off takes the plain decode path and must still match shapes
  TrainConfig nosa = cfg;
  nosa.sa_enabled = false;
  Tensor plain = eval_forward(st.teacher, v, nosa, st.model);
  CHECK(plain.shape == logits.shape);
}

TEST_CASE("finite differences expose an injected gradient sign error") {
  // A fixture op whose backward deliberately flips the sign: the harness
  // must report a large relative error.
  Rng rng(5);
  ParamStore ps;
  ps.add("x", Tensor::normal({3, 3}, rng));
  const real err = finite_diff_check(ps, [](Tape& t, ParamBinder& P) {
    NodePtr x = P("x");
    Tensor v({1});
    v.data[0] = x->val.data.square().sum();
    return t.record(std::move(v), {x}, [x](Node& self) {
      accum_grad(*x, -2.0 * self.grad.data[0] * x->val.data);  // wrong sign
    });
  });
  CHECK(err > 1e-4);
}

TEST_CASE("trainer config validation rejects bad fields") {
  TrainConfig cfg = tiny_cfg();
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_cfg();
  cfg.batch_size = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_cfg();
  cfg.lambda_ema = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_cfg();
  cfg.mask_resample = "sometimes";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
