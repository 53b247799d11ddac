#include "wordorder/cli.hpp"

int main(int argc, char** argv) { return wordorder::cli::run(argc, argv); }
