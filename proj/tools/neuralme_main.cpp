#include <string>
#include <vector>

#include "neuralme/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return neuralme::run_cli(args);
}
