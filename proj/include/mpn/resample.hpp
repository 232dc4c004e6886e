#pragma once

// Separable linear-interpolation tables shared by the flow and feature
// resizers. Half-pixel convention: dst index d maps to source coordinate
// (d + 0.5) * src_n / dst_n - 0.5, clamped to [0, src_n - 1].

#include <vector>

namespace mpn::detail {

struct LinearAxis {
    std::vector<int> lo;
    std::vector<int> hi;
    std::vector<double> w_hi;  // weight of `hi`; `lo` gets 1 - w_hi
};

LinearAxis make_linear_axis(int src_n, int dst_n);

}  // namespace mpn::detail
