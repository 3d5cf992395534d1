#include <iostream>

#include "multimae/cli.hpp"

int main(int argc, char** argv) { return multimae::run_cli(argc, argv, std::cout, std::cerr); }
