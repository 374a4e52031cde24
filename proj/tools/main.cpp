#include <string>
#include <vector>

#include "l96/cli.hpp"

int main(int argc, char** argv) {
  return l96::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
