#include "tram/harness.hpp"

int main(int argc, char** argv) { return tram::run_cli(argc, argv); }
