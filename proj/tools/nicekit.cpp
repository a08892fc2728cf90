#include "nicekit/cli.hpp"

int main(int argc, char** argv) { return nicekit::cli::run_command(argc, argv); }
