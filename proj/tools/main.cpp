#include <iostream>
#include <string>
#include <vector>

#include "hybridflow/cli.hpp"

int main(int argc, char** argv) {
  return hybridflow::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
