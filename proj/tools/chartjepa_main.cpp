#include "chartjepa/cli.hpp"

int main(int argc, char** argv) { return chartjepa::cli::run(argc, argv); }
