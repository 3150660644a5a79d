#include "cellsteer/cli.hpp"

int main(int argc, char **argv) {
  return cellsteer::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
