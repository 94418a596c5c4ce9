#include <iostream>

#include "blife/pipeline.hpp"

int main(int argc, char** argv) { return blife::run_cli(argc, argv, std::cout, std::cerr); }
