#include "rgmm/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return rgmm::run_cli(argc, argv, std::cout, std::cerr); }
