#include "mapl/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return mapl::cli::run(argc, argv, std::cout, std::cerr); }
