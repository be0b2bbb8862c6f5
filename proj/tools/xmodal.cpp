#include "xmodal/cli.hpp"

int main(int argc, char** argv) { return xmodal::cli::cli_main(argc, argv); }
