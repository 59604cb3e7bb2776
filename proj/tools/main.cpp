#include "gravity/cli.hpp"

int main(int argc, char** argv) { return gravity::run_cli(argc, argv); }
