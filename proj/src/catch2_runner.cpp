// Builds the Catch2 amalgamated runtime (including its main) once for all test binaries.
#include <catch2/catch_amalgamated.cpp>
