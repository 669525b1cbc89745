#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "afdgcn/tensor.hpp"

int main(int argc, char** argv) {
  // Every test runs with NaN/Inf rejection enabled.
  afdgcn::set_checked_mode(true);
  doctest::Context ctx;
  ctx.applyCommandLine(argc, argv);
  return ctx.run();
}
