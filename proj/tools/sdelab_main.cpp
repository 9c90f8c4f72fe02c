#include "sdelab/experiments.hpp"

int main(int argc, char** argv) { return sdelab::run_cli(argc, argv); }
