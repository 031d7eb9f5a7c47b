#include "selfcollage/cli.hpp"

int main(int argc, char** argv) { return selfcollage::cli::run_cli(argc, argv); }
