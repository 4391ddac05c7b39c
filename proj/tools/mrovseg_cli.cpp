// Command-line entry point; subcommands are wired in cli_impl.hpp.
#include "cli_impl.hpp"

int main(int argc, char** argv) { return mrovseg::cli_main(argc, argv); }
