#include <iostream>

#include "onnxnet/cli.hpp"

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  return onnxnet::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
