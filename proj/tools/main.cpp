#include "sfl/cli.hpp"

int main(int argc, char** argv) { return sfl::cli::main_entry(argc, argv); }
