#include "jamlab/cli.hpp"

int main(int argc, char** argv) { return jamlab::cli::run_cli(argc, argv); }
