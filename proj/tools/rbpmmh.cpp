#include "rbpmmh/cli.hpp"

int main(int argc, char** argv) { return rbpmmh::cli::main(argc, argv); }
