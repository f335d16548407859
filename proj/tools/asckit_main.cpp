#include "asckit/cli.hpp"

int main(int argc, char** argv) { return asckit::cli::run(argc, argv); }
