#include <catch2/catch_amalgamated.hpp>

#include "histcode/pipeline.hpp"
