#include <iostream>
#include <string>
#include <vector>

#include "mvpd/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return mvpd::run_cli(args, std::cout, std::cerr);
}
