#include "constalign/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return constalign::cli::run(argc, argv, std::cout, std::cerr); }
