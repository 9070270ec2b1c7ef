#include <iostream>

#include "triage/cli.hpp"

int main(int argc, char** argv) {
  return triage::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
