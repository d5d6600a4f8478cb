#include "fvdb/cli.hpp"

int main(int argc, char** argv) { return fvdb::run_cli(argc, argv); }
