#include "mos/cli.hpp"

int main(int argc, char** argv) { return mos::cli::run(argc, argv); }
