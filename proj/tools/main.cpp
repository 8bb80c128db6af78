#include "inasim/runner.hpp"
int main() { return 0; }
