#include <iostream>
#include <string>
#include <vector>

#include "jointdiff/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return jointdiff::run_cli(args, std::cout, std::cerr);
}
