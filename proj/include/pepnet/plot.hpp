#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "pepnet/metrics.hpp"

namespace pepnet {

/// ROC points per fold, as read from a `fold,fpr,tpr,threshold` CSV.
using RocSeries = std::map<std::size_t, std::vector<RocPoint>>;

RocSeries parse_roc_csv(const std::string& text);

/// SVG with one polyline per fold, the chance diagonal, and an AUC
/// annotation per fold (trapezoidal area of the given points) plus the mean.
std::string roc_svg(const RocSeries& series, const std::string& title = "ROC");

}  // namespace pepnet
