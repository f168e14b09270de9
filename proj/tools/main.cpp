#include <iostream>

#include "scbm/cli.hpp"

int main(int argc, char** argv) { return scbm::cli_main(argc, argv, std::cout, std::cerr); }
