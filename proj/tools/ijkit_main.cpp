#include "ijkit/cli.hpp"

int main(int argc, char** argv) { return ijkit::cli_main(argc, argv); }
