#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "graphcl/config.hpp"
#include "graphcl/volume.hpp"

namespace graphcl {

// Parses and dispatches one CLI invocation. `args` excludes the program name.
// Returns a process exit code: 0 ok, 2 config error, 3 numeric error, 4 I/O.
int run_cli(const std::vector<std::string>& args);

// Dataset directory access shared by the commands and the tests.
std::vector<std::pair<Volume, LabelMap>> load_dataset(
    const std::filesystem::path& data_dir);

int cmd_gen_data(const std::filesystem::path& spec_path,
                 const std::filesystem::path& out_dir);
int cmd_pretrain(const RunConfig& cfg);
int cmd_selftrain(RunConfig cfg, const std::string& init_prefix, bool no_sa,
                  bool no_cc);
int cmd_eval(const RunConfig& cfg, const std::filesystem::path& ckpt_prefix,
             const std::filesystem::path& data_dir,
             const std::filesystem::path& out_csv, const std::string& net,
             bool allow_train_eval);
int cmd_ablate(const RunConfig& cfg);
int cmd_gradcheck(const std::string& module, std::uint64_t seed);

}  // namespace graphcl
