#include "hba/cli.hpp"

int main(int argc, char** argv) { return hba::cli_main(argc, argv); }
