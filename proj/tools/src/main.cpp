#include <iostream>

#include "cardioseg_cli/cli.hpp"

int main(int argc, char** argv) {
    return cardioseg::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
