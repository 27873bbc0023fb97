#include "pprobe_cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return pprobe::cli::run_cli(args);
}
