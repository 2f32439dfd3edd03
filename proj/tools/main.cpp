#include <iostream>
#include <string>
#include <vector>

#include "erohprf/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return erohprf::cli_dispatch(args, std::cout, std::cerr);
}
