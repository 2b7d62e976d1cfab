#include "foamfed/cli.hpp"

int main(int argc, char** argv) { return foamfed::cli_run(argc, argv); }
