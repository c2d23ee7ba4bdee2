#include "gisurrogate/cli.hpp"

int main(int argc, char** argv) { return gisur::run_cli(argc, argv); }
