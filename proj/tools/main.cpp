#include <iostream>
#include <string>
#include <vector>

#include "tscopf/app.hpp"

int main(int argc, char** argv) {
  return tscopf::app::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
