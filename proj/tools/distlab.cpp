#include <iostream>

#include "distlab/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return distlab::cli::run(args, std::cout, std::cerr);
}
