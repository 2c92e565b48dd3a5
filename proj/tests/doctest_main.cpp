#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "bilink/contrastive_trainer.hpp"

int main(int argc, char** argv) {
  bilink::tune_allocator();
  spdlog::set_level(spdlog::level::warn);
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
