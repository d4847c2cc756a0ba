#include "hbeval/cli.hpp"

int main(int argc, char** argv) { return hbeval::cli::run(argc, argv); }
