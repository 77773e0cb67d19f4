#include "hvdc/cli.hpp"

int main(int argc, char** argv) { return hvdc::cli::run(argc, argv); }
