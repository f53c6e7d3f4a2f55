#include <iostream>

#include "fpstain/cli.hpp"

int main(int argc, char** argv) { return fpstain::cli::dispatch(argc, argv, std::cout, std::cerr); }
