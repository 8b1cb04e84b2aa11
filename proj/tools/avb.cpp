#include "avb/cli.hpp"

int main(int argc, char** argv) { return avb::cli::run(argc, argv); }
