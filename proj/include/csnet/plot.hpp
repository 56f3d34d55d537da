#pragma once

#include <string>
#include <vector>

#include "csnet/train.hpp"

namespace csnet {

/// Renders the loss and error curves of a metrics stream into a 24-bit BMP:
/// training loss against the left axis, error percentages against the right.
void render_metrics_bmp(const std::vector<MetricsRecord>& metrics, const std::string& path,
                        int width = 640, int height = 400);

}  // namespace csnet
