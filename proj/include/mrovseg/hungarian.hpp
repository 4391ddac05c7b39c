#pragma once

#include <vector>

#include "mrovseg/common.hpp"

namespace mrovseg {

// Exact min-cost one-to-one assignment of `rows` ground-truth items to `cols`
// queries (rows <= cols). `cost` is row-major rows x cols, all finite.
// Returns the assigned column for each row.
std::vector<int> hungarian_match(const std::vector<double>& cost, int rows, int cols);

}  // namespace mrovseg
