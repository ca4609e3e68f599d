#include "riskopf/cli.hpp"

int main(int argc, char** argv) { return riskopf::cli::run_cli(argc, argv); }
