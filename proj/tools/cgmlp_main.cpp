#include <iostream>

#include "cgmlp/cli.hpp"
#include "cgmlp/tensor.hpp"

int main(int argc, char** argv) {
  cgmlp::retain_heap_memory();
  return cgmlp::cli::run_cli(argc, argv, std::cout, std::cerr);
}
