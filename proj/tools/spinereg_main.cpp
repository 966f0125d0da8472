#include "spinereg/cli.hpp"

int main(int argc, char** argv) { return spinereg::run_cli(argc, argv); }
