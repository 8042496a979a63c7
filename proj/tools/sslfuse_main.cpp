#include "sslfuse/cli.hpp"

int main(int argc, char** argv) { return sslfuse::cli_main(argc, argv); }
