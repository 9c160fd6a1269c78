#include "oema/cli.hpp"

int main(int argc, char** argv) { return oema::cli::run_main(argc, argv); }
