#include "mgeo/cli.hpp"

int main(int argc, char** argv) { return mgeo::run_cli(argc, argv); }
