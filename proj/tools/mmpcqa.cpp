#include "mmpcqa/harness.hpp"

int main(int argc, char** argv) { return mmpcqa::run_cli(argc, argv); }
