#include "pathsyn/cli.hpp"

int main(int argc, char** argv) { return pathsyn::cli::cli_main(argc, argv); }
