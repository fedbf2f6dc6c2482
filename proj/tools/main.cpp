#include <iostream>
#include <string>
#include <vector>

#include "efficientad/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return ead::run_cli(args, std::cout, std::cerr);
}
