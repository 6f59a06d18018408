#include <iostream>
#include <string>
#include <vector>

#include "dvt/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dvt::run_cli(args, std::cout, std::cerr);
}
