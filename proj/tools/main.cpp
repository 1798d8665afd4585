#include "unlearn_forge/experiment.hpp"

int main(int argc, char** argv) { return uf::run_cli(argc, argv); }
