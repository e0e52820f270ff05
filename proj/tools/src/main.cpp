#include <iostream>
#include <string>
#include <vector>

#include "grlab/cli/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return grlab::cli::run_app(args, std::cout, std::cerr);
}
