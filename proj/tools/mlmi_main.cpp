#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return mlmi::cli_main(argc, argv, std::cout, std::cerr); }
