#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "graphcl/params.hpp"

namespace graphcl {

struct GradResult {
  std::string name;
  std::string module;
  real max_rel_err = 0;
  bool pass(real tol = 1e-4) const { return max_rel_err <= tol; }
};

// Builds the scalar loss node from bound parameters.
using LossBuilder = std::function<NodePtr(Tape&, ParamBinder&)>;

// Central finite differences over every parameter scalar; relative error is
// |a - n| / max(1, |a|, |n|).
real finite_diff_check(const ParamStore& params, const LossBuilder& f, real eps = 1e-5);

// Registered subgraph suites. module is one of netcore|structalign|
// graphcluster|losses; "all" matches everything.
std::vector<GradResult> run_gradchecks(const std::string& module_filter,
                                       std::uint64_t seed, int instances = 5);

std::vector<std::string> gradcheck_modules();

}  // namespace graphcl
