#include <iostream>
#include <string>
#include <vector>

#include "memaudit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return memaudit::run_cli(args, std::cout, std::cerr);
}
