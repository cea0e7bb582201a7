#include <iostream>

#include "mgnet/cli.hpp"

int main(int argc, char** argv) { return mgnet::cli::run_cli(argc, argv, std::cout, std::cerr); }
