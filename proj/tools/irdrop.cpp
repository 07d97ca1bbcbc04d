#include <iostream>

#include "irdrop/cli.hpp"

int main(int argc, char** argv) { return irdrop::cli::run(argc, argv, std::cout, std::cerr); }
