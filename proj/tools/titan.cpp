#include "titan/cli.hpp"

int main(int argc, char** argv) { return titan::cli::run(argc, argv); }
