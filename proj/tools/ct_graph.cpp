#include "ctgraph/cli.hpp"

int main(int argc, char** argv) { return ctgraph::run_cli(argc, argv); }
