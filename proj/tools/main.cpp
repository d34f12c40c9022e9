#include "bdfadj/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return bdfadj::run_cli(argc, argv, std::cout, std::cerr);
}
