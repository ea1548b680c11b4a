#include <cstdio>
#include <string>
#include <vector>

#include "megcast/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    std::string error_line;
    const int rc = megcast::run_command(args, &error_line);
    if (!error_line.empty()) std::fprintf(stderr, "%s\n", error_line.c_str());
    return rc;
}
