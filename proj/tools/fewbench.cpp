#include "fewbench/cli.hpp"

int main(int argc, char** argv) { return fewbench::cli_main(argc, argv); }
