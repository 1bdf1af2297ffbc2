#include <iostream>

#include "vmae/cli.hpp"

int main(int argc, char** argv) { return vmae::run_cli(argc, argv, std::cout, std::cerr); }
