#include "a2n/cli.hpp"

int main(int argc, char** argv) { return a2n::cli::run(argc, argv); }
