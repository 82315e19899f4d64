#include "spml/cli.hpp"

int main(int argc, char** argv) { return spml::cli::run_cli(argc, argv); }
