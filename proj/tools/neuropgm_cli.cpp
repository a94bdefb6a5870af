#include "neuropgm/cli.hpp"

int main(int argc, char** argv) { return neuropgm::cli_main(argc, argv); }
