#include <iostream>
#include <string>
#include <vector>

#include "nona/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return nona::run_cli(args, std::cout, std::cerr);
}
