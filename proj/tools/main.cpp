#include "commands.hpp"

int main(int argc, char** argv) { return expertseg::cli::run(argc, argv); }
