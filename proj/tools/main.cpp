#include <iostream>
#include <string>
#include <vector>

#include "pepnet/cli.hpp"

int main(int argc, char** argv) {
  return pepnet::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
