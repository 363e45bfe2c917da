#include "cabb/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return cabb::cli::run_cli(argc, argv, std::cout, std::cerr); }
