#include "cli.hpp"

int main(int argc, char** argv) { return vmfcoop::cli::cli_main(argc, argv); }
