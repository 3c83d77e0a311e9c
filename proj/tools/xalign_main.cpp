#include "xalign/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return xalign::cli::dispatch(args, std::cout, std::cerr);
}
