#include <iostream>

#include "occ/cli.hpp"

int main(int argc, char** argv) { return occ::cli_main(argc, argv, std::cout, std::cerr); }
