#include "cdnb/cli/dispatch.hpp"

int main(int argc, char** argv) { return cdnb::cli::dispatch(argc, argv); }
