#include <iostream>

#include "committee/cli.hpp"

int main(int argc, char** argv) { return committee::cli::run_cli(argc, argv, std::cout, std::cerr); }
