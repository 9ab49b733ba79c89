#include "mdb/cli.hpp"

int main(int argc, char** argv) { return mdb::cli_run(argc, argv); }
