#include <iostream>

#include "handfit/cli.hpp"

int main(int argc, char** argv) { return handfit::cli::run(argc, argv, std::cout, std::cerr); }
