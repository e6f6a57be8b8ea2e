#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cysgan/metrics.hpp"

namespace cysgan::cli {

/// Precision-recall plot, one step polyline per named curve.
std::string pr_curve_svg(const std::vector<std::pair<std::string, APReport>>& curves);

}  // namespace cysgan::cli
