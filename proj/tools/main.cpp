#include <iostream>

#include "acpgn/cli.hpp"

int main(int argc, char** argv) { return acpgn::cli::run_cli(argc, argv, std::cout, std::cerr); }
