#pragma once

#include <array>
#include <string>

#include "dboot/common.hpp"

namespace dboot {

// Minimal 8-bit RGB PNG writer (zlib-deflated, no filtering heuristics).
void write_png_rgb(const std::string& path, const std::array<Matrix, 3>& channels);

// Label map rendered with the class palette.
void write_png_labels(const std::string& path, const Eigen::MatrixXi& labels);

}  // namespace dboot
