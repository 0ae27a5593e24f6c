#include <iostream>

#include "nllm/cli.hpp"

int main(int argc, char** argv) { return nllm::run_cli(argc, argv, std::cout, std::cerr); }
