#include "flowlab/cli.hpp"

int main(int argc, char** argv) { return flowlab::cli_main(argc, argv); }
