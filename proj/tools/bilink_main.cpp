#include "bilink/cli.hpp"

int main(int argc, char** argv) { return bilink::run_cli(argc, argv); }
