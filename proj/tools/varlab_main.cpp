#include <iostream>
#include <string>
#include <vector>

#include "varlab/cli/app.hpp"

int main(int argc, char** argv) {
  return varlab::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
