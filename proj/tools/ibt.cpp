#include "ibt/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    ibt::tune_allocator();
    return ibt::run_cli(argc, argv, std::cout, std::cerr);
}
