#include <cstdint>
#include <iostream>
#include <vector>

#include <triage/imbalance.hpp>

int main() {
  const std::vector<std::int64_t> counts = {900, 100};
  const auto w = triage::imbalance::class_weights(counts);
  std::cout << w[1] << "\n";
  return w[1] > w[0] ? 0 : 1;
}
