#include <string>
#include <vector>

#include "graphcl/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return graphcl::run_cli(args);
}
