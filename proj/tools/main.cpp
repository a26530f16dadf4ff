#include <string>
#include <vector>

#include "rrfb/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rrfb::run_cli(args);
}
