#include <iostream>

#include "l2tkt/cli.hpp"

int main(int argc, char** argv) { return l2tkt::cli::main(argc, argv, std::cout, std::cerr); }
