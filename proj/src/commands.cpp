#include "graphcl/commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "graphcl/gradcheck.hpp"
#include "graphcl/params.hpp"
#include "graphcl/segmetrics.hpp"
#include "graphcl/trainer.hpp"

namespace graphcl {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

int env_threads() {
  const char* v = std::getenv("GRAPHCL_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  return n > 0 ? n : 1;
}

std::vector<std::string> labeled_ids(const DatasetSplit& split) {
  std::vector<std::string> ids;
  for (const auto& [v, l] : split.labeled) ids.push_back(v.id);
  return ids;
}

DatasetSplit make_split(const RunConfig& cfg,
                        const std::vector<std::pair<Volume, LabelMap>>& data) {
  return split_dataset(data, cfg.labeled_ratio, cfg.train.seed);
}

// Copies checkpoint tensors into dst wherever name and shape match; the rest
// keep their fresh initialization (the gcn_level sweep changes SA shapes).
int copy_matching(ParamStore& dst, const ParamStore& src) {
  int copied = 0;
  for (auto& [name, t] : dst.items())
    if (src.has(name) && src.at(name).same_shape(t)) {
      t.data = src.at(name).data;
      ++copied;
    }
  return copied;
}

struct EvalOutcome {
  std::vector<MetricsRecord> records;
  std::string csv;
};

EvalOutcome eval_checkpoint(const RunConfig& cfg, const fs::path& ckpt_prefix,
                            const fs::path& data_dir, const std::string& net,
                            bool allow_train_eval) {
  if (net != "teacher" && net != "student")
    throw ConfigError("eval: --net must be teacher or student");
  std::vector<std::string> train_ids;
  ParamStore params = load_checkpoint(ckpt_prefix, &train_ids);
  if (params.role != net)
    throw ConfigError("eval: checkpoint role is '" + params.role +
                      "' but --net asked for '" + net + "'");
  const std::set<std::string> train_set(train_ids.begin(), train_ids.end());

  auto data = load_dataset(data_dir);
  std::vector<std::pair<Volume, LabelMap>> held;
  for (auto& sample : data) {
    if (!allow_train_eval && train_set.count(sample.first.id)) continue;
    held.push_back(std::move(sample));
  }
  if (held.empty())
    throw ConfigError("eval: no held-out volumes (every id is in the training "
                      "labeled set; pass --allow-train-eval to include them)");

  const Volume& v0 = held[0].first;
  const ModelConfig model = build_model_config(cfg.train, v0.channels(), v0.depth(),
                                               v0.height(), v0.width(),
                                               held[0].second.classes);
  std::vector<std::vector<MetricsRecord>> per_volume(held.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Volume& v = held[i].first;
      const LabelMap& gt = held[i].second;
      const Tensor logits = eval_forward(params, v, cfg.train, model);
      const LabelMap pred = pseudo_label(logits);
      per_volume[i] = evaluate_volume(v.id, pred, gt, v.spacing, cfg.hd95());
    }
  };
  const int threads = std::min<int>(env_threads(), static_cast<int>(held.size()));
  if (threads <= 1) {
    work(0, held.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (held.size() + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(held.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  EvalOutcome out;
  for (const auto& recs : per_volume)
    out.records.insert(out.records.end(), recs.begin(), recs.end());
  out.csv = metrics_csv(out.records);
  return out;
}

real mean_dice(const std::vector<MetricsRecord>& records) {
  if (records.empty()) return 0;
  real s = 0;
  for (const auto& r : records) s += r.dice;
  return s / static_cast<real>(records.size());
}

struct SelftrainArtifacts {
  real final_l_all = 0;
};

// One selftrain run: warm-start from `init_prefix`, log to out_dir, write
// student_final/teacher_final checkpoints tagged with the training label ids.
SelftrainArtifacts run_selftrain_into(const RunConfig& cfg, const DatasetSplit& split,
                                      const fs::path& init_prefix,
                                      const fs::path& out_dir) {
  if (!fs::exists(fs::path(init_prefix.string() + ".ckpt.json")))
    throw ConfigError("selftrain: no pretrain checkpoint at " + init_prefix.string() +
                      " (run pretrain first or pass --init)");
  TrainState st = init_state(split, cfg.train);
  std::vector<std::string> train_ids;
  const ParamStore loaded = load_checkpoint(init_prefix, &train_ids);
  if (copy_matching(st.student, loaded) == 0)
    throw ConfigError("selftrain: checkpoint " + init_prefix.string() +
                      " shares no parameters with this model configuration");
  st.teacher = st.student;
  st.teacher.role = "teacher";
  st.teacher_hash = param_hash(st.teacher);
  st.iteration = cfg.train.iters_pretrain;
  st.student.iteration = st.iteration;
  st.teacher.iteration = st.iteration;
  st.pretrained = true;

  fs::create_directories(out_dir);
  std::ostringstream log;
  run_selftrain(st, split, cfg.train, log, out_dir);
  write_text(out_dir / "train.log.jsonl", log.str());

  std::vector<std::string> ids = train_ids.empty() ? labeled_ids(split) : train_ids;
  save_checkpoint(st.student, out_dir / "student_final", ids);
  save_checkpoint(st.teacher, out_dir / "teacher_final", ids);

  SelftrainArtifacts art;
  const std::string text = log.str();
  const auto last_open = text.rfind("{\"iter\"");
  if (last_open != std::string::npos) {
    const json line = json::parse(text.substr(last_open));
    art.final_l_all = line.at("l_all").get<real>();
  }
  return art;
}

std::string csv_real(real v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::vector<std::pair<Volume, LabelMap>> load_dataset(const fs::path& data_dir) {
  const fs::path manifest_path = data_dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw IoError("dataset manifest not found: " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw IoError("bad manifest " + manifest_path.string() + ": " + e.what());
  }
  std::vector<std::pair<Volume, LabelMap>> data;
  for (const auto& entry : manifest.at("entries")) {
    const std::string id = entry.at("id").get<std::string>();
    if (!entry.value("split_eligible", true)) continue;
    Volume v = read_volume(data_dir / entry.at("volume").get<std::string>());
    LabelMap l = read_label(data_dir / entry.at("label").get<std::string>());
    v.id = id;
    data.emplace_back(std::move(v), std::move(l));
  }
  if (data.empty())
    throw IoError("dataset manifest lists no usable entries: " + manifest_path.string());
  return data;
}

int cmd_gen_data(const fs::path& spec_path, const fs::path& out_dir) {
  const PhantomSpec spec = load_phantom_spec(spec_path);
  auto data = generate_phantoms(spec);
  fs::create_directories(out_dir);
  json manifest;
  manifest["classes"] = spec.classes;
  manifest["entries"] = json::array();
  for (const auto& [v, l] : data) {
    write_volume(v, out_dir / (v.id + ".vol"));
    write_label(l, out_dir / (v.id + ".lbl"));
    json entry;
    entry["id"] = v.id;
    entry["volume"] = v.id + ".vol";
    entry["label"] = v.id + ".lbl";
    entry["split_eligible"] = true;
    manifest["entries"].push_back(entry);
  }
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return kExitOk;
}

int cmd_pretrain(const RunConfig& cfg) {
  const auto data = load_dataset(cfg.data_dir);
  const DatasetSplit split = make_split(cfg, data);
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);

  json split_doc;
  split_doc["seed"] = cfg.train.seed;
  split_doc["labeled"] = labeled_ids(split);
  split_doc["unlabeled"] = json::array();
  for (const auto& v : split.unlabeled) split_doc["unlabeled"].push_back(v.id);
  write_text(out / "split.json", split_doc.dump(2) + "\n");

  TrainState st = init_state(split, cfg.train);
  std::ostringstream log;
  pretrain(st, split, cfg.train, &log);
  write_text(out / "pretrain.log.jsonl", log.str());
  save_checkpoint(st.student, out / "pretrain", labeled_ids(split));
  return kExitOk;
}

int cmd_selftrain(RunConfig cfg, const std::string& init_prefix, bool no_sa,
                  bool no_cc) {
  if (no_sa) cfg.train.sa_enabled = false;
  if (no_cc) cfg.train.cc_enabled = false;
  const auto data = load_dataset(cfg.data_dir);
  const DatasetSplit split = make_split(cfg, data);
  const fs::path init =
      init_prefix.empty() ? fs::path(cfg.out_dir) / "pretrain" : fs::path(init_prefix);
  run_selftrain_into(cfg, split, init, cfg.out_dir);
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& ckpt_prefix, const fs::path& data_dir,
             const fs::path& out_csv, const std::string& net, bool allow_train_eval) {
  const EvalOutcome out = eval_checkpoint(cfg, ckpt_prefix, data_dir, net,
                                          allow_train_eval);
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  write_text(out_csv, out.csv);
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg) {
  const auto data = load_dataset(cfg.data_dir);
  const DatasetSplit split = make_split(cfg, data);
  const fs::path base = fs::path(cfg.out_dir) / "ablate";
  fs::create_directories(base);

  // One shared supervised warm start; only backbone weights are trained there.
  const fs::path pre_prefix = base / "pretrain";
  if (!fs::exists(fs::path(pre_prefix.string() + ".ckpt.json"))) {
    TrainState st = init_state(split, cfg.train);
    std::ostringstream log;
    pretrain(st, split, cfg.train, &log);
    write_text(base / "pretrain.log.jsonl", log.str());
    save_checkpoint(st.student, pre_prefix, labeled_ids(split));
  }

  struct Row {
    std::string name;
    bool sa, cc;
    int gcn_level;  // 0 keeps the config default
  };
  std::vector<Row> rows = {
      {"baseline", false, false, 0},
      {"sa", true, false, 0},
      {"cc", false, true, 0},
      {"sa_cc", true, true, 0},
  };
  for (int l = 1; l <= cfg.train.levels; ++l)
    rows.push_back({"gcn_level_" + std::to_string(l), true, true, l});

  std::ostringstream csv;
  csv << "row,seed,sa,cc,gcn_level,mean_dice,final_l_all\n";
  for (const Row& row : rows) {
    RunConfig rc = cfg;
    rc.train.sa_enabled = row.sa;
    rc.train.cc_enabled = row.cc;
    if (row.gcn_level > 0) rc.train.gcn_level = row.gcn_level;
    const fs::path row_dir = base / row.name;
    const SelftrainArtifacts art = run_selftrain_into(rc, split, pre_prefix, row_dir);
    const EvalOutcome ev = eval_checkpoint(rc, row_dir / "teacher_final", cfg.data_dir,
                                           "teacher", /*allow_train_eval=*/false);
    write_text(row_dir / "metrics.csv", ev.csv);
    csv << row.name << ',' << cfg.train.seed << ',' << (row.sa ? 1 : 0) << ','
        << (row.cc ? 1 : 0) << ','
        << (row.gcn_level > 0 ? row.gcn_level : cfg.train.effective_gcn_level()) << ','
        << csv_real(mean_dice(ev.records)) << ',' << csv_real(art.final_l_all) << '\n';
  }
  write_text(base / "ablation.csv", csv.str());
  return kExitOk;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed) {
  const auto results = run_gradchecks(module, seed);
  if (results.empty()) throw ConfigError("gradcheck: unknown module '" + module + "'");
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.pass();
    ok = ok && pass;
    std::cout << (pass ? "PASS" : "FAIL") << ' ' << r.module << '.' << r.name
              << " max_rel_err=" << r.max_rel_err << '\n';
  }
  if (!ok) {
    std::cerr << "gradcheck: at least one subgraph exceeded tolerance 1e-4\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"graph-clustering semi-supervised segmentation toolkit"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
  gen->add_option("--spec", spec_path, "phantom spec JSON")->required();
  gen->add_option("--out", out_dir, "output directory")->required();

  std::string config_path;
  auto* pre = app.add_subcommand("pretrain", "supervised warm-up on labeled volumes");
  pre->add_option("--config", config_path, "run config JSON")->required();

  std::string st_config, init_prefix;
  bool no_sa = false, no_cc = false;
  auto* st = app.add_subcommand("selftrain", "bidirectional copy-paste self-training");
  st->add_option("--config", st_config, "run config JSON")->required();
  st->add_option("--init", init_prefix, "warm-start checkpoint prefix");
  st->add_flag("--no-sa", no_sa, "disable the structure-aware branch");
  st->add_flag("--no-cc", no_cc, "disable the clustering loss");

  std::string ev_config, ev_ckpt, ev_data, ev_out, ev_net = "";
  bool allow_train_eval = false;
  auto* ev = app.add_subcommand("eval", "segmentation metrics on held-out volumes");
  ev->add_option("--config", ev_config, "run config JSON")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint prefix")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--out", ev_out, "output metrics CSV")->required();
  ev->add_option("--net", ev_net, "teacher|student (default from config)");
  ev->add_flag("--allow-train-eval", allow_train_eval,
               "include volumes from the training labeled set");

  std::string ab_config;
  auto* ab = app.add_subcommand("ablate", "toggle grid and gcn-level sweep");
  ab->add_option("--config", ab_config, "run config JSON")->required();

  std::string gc_module = "all";
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  gc->add_option("--module", gc_module, "all|netcore|structalign|graphcluster|losses");
  gc->add_option("--seed", gc_seed, "base seed for the random instances");

  std::vector<const char*> argv;
  argv.push_back("graphcl");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? kExitOk : kExitConfig;
    }
    if (gen->parsed()) return cmd_gen_data(spec_path, out_dir);
    if (pre->parsed()) return cmd_pretrain(load_run_config(config_path));
    if (st->parsed())
      return cmd_selftrain(load_run_config(st_config), init_prefix, no_sa, no_cc);
    if (ev->parsed()) {
      const RunConfig cfg = load_run_config(ev_config);
      const std::string net = ev_net.empty() ? cfg.eval_net : ev_net;
      return cmd_eval(cfg, ev_ckpt, ev_data, ev_out, net,
                      allow_train_eval || cfg.allow_train_eval);
    }
    if (ab->parsed()) return cmd_ablate(load_run_config(ab_config));
    if (gc->parsed()) return cmd_gradcheck(gc_module, gc_seed);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace graphcl
