#include "superlab/cli.hpp"

int main(int argc, char** argv) { return superlab::cli::run_main(argc, argv); }
