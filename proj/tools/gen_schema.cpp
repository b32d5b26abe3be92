// SPDX-License-Identifier: Apache-2.0
//
// Prints the JSON schema of the training configuration (docs/config.schema.json).

#include <iostream>

#include "dagrpo/config.hpp"

int main() {
  std::cout << dagrpo::config_schema().dump(2) << '\n';
  return 0;
}
