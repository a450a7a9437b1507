#include "gpcf/cli.hpp"

int main(int argc, char** argv) { return gpcf::cli::run(argc, argv); }
