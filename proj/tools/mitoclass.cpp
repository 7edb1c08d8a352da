#include "mitoclass/cli.hpp"

int main(int argc, char** argv) { return mitoclass::run_cli(argc, argv); }
