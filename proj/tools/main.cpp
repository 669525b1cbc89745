#include "commands.hpp"

int main(int argc, char** argv) { return afdgcn::cli::run(argc, argv); }
