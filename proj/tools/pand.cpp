#include "pand/cli.hpp"

int main(int argc, char** argv) { return pand::cli::run(argc, argv); }
