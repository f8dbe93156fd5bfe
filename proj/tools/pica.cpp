#include "pica/app.hpp"

int main(int argc, char** argv) { return pica::run(argc, argv); }
