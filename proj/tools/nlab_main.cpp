#include "nlab/harness.hpp"

int main(int argc, char** argv) { return nlab::cli_main(argc, argv); }
