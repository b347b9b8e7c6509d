#include "pipert/cli.hpp"

int main(int argc, char** argv) { return pipert::cli::run(argc, argv); }
