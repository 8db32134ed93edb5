#include "fmv2/cli.hpp"

int main(int argc, char** argv) { return fmv2::cli::run(argc, argv); }
