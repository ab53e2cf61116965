#include <iostream>

#include "nonfat/commands.hpp"

int main(int argc, char** argv) { return nonfat::run_cli(argc, argv, std::cout, std::cerr); }
