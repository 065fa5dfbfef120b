#include "mergepipe/cli.hpp"

int main(int argc, char** argv) { return mergepipe::cli::main(argc, argv); }
