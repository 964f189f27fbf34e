#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <spdlog/spdlog.h>

#include "decaf/runtime.hpp"

int main(int argc, char** argv) {
  decaf::tune_allocator();
  spdlog::set_level(spdlog::level::err);
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
