#include "infoplane/cli.hpp"

int main(int argc, char** argv) { return infoplane::cli::run_cli(argc, argv); }
