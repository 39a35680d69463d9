#include "zsp/cli.hpp"

int main(int argc, char** argv) { return zsp::cli::run(argc, argv); }
