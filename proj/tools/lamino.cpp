#include <iostream>

#include "lamino/pipeline/cli.hpp"

int main(int argc, char** argv) { return lamino::pipeline::cli_dispatch(argc, argv, std::cout, std::cerr); }
