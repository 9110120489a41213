#include <iostream>

#include "ectwin/commands.hpp"

int main(int argc, char** argv) { return ectwin::run_cli(argc, argv, std::cout, std::cerr); }
