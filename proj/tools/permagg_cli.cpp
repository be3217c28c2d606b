#include "permagg/cli.hpp"

int main(int argc, char** argv) { return permagg::cli_main(argc, argv); }
