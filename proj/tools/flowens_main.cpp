#include "flowens/expcli/cli.hpp"

int main(int argc, char** argv) { return flowens::cli::cli_main(argc, argv); }
