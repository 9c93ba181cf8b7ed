#include <iostream>

#include "cmrl/cli.hpp"

int main(int argc, char** argv) { return cmrl::cli::run(argc, argv, std::cout, std::cerr); }
