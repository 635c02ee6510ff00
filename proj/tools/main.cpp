#include "cli.hpp"

int main(int argc, char** argv) { return cfr::cli::dispatch(argc, argv); }
