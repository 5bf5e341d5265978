#include <iostream>
#include <string>
#include <vector>

#include "fediskit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fediskit::run_cli(args, std::cout, std::cerr);
}
