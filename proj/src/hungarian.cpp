#include "mrovseg/hungarian.hpp"

#include <cmath>
#include <limits>

namespace mrovseg {

// Shortest-augmenting-path formulation with row/column potentials.
std::vector<int> hungarian_match(const std::vector<double>& cost, int rows, int cols) {
    if (rows < 0 || cols < 0) throw ContractError("hungarian_match: negative dimensions");
    if (rows > cols)
        throw ContractError("hungarian_match: more ground-truth items (" + std::to_string(rows) +
                            ") than queries (" + std::to_string(cols) + ")");
    if (static_cast<int64_t>(cost.size()) != static_cast<int64_t>(rows) * cols)
        throw ContractError("hungarian_match: cost matrix size mismatch");
    for (double c : cost)
        if (!std::isfinite(c)) throw ContractError("hungarian_match: non-finite cost");
    if (rows == 0) return {};

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<size_t>(rows) + 1, 0.0);
    std::vector<double> v(static_cast<size_t>(cols) + 1, 0.0);
    std::vector<int> match(static_cast<size_t>(cols) + 1, 0);  // column -> row (1-based)
    std::vector<int> way(static_cast<size_t>(cols) + 1, 0);

    for (int i = 1; i <= rows; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(cols) + 1, inf);
        std::vector<bool> used(static_cast<size_t>(cols) + 1, false);
        do {
            used[static_cast<size_t>(j0)] = true;
            int i0 = match[static_cast<size_t>(j0)];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= cols; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                double cur = cost[static_cast<size_t>(i0 - 1) * cols + (j - 1)] -
                             u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= cols; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<size_t>(j0)];
            match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> out(static_cast<size_t>(rows), -1);
    for (int j = 1; j <= cols; ++j)
        if (match[static_cast<size_t>(j)] > 0) out[static_cast<size_t>(match[static_cast<size_t>(j)] - 1)] = j - 1;
    return out;
}

}  // namespace mrovseg
