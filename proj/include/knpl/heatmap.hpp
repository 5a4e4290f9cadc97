#pragma once

#include <filesystem>

#include "knpl/model.hpp"

namespace knpl::heatmap {

// Final-position post-SiLU activations of a captured trace, stacked into a
// layers x d_ff matrix so they render the same way attribution maps do.
ad::Mat activation_matrix(const model::ForwardTrace& trace);

struct HeatmapFiles {
    std::filesystem::path pixmap;  // plain ascii pixmap, one pixel per cell
    std::filesystem::path vector;  // svg rendering of the same grid
    std::filesystem::path sidecar; // scaling constants as text
};

// Writes the grid at `path` plus .svg and .txt siblings sharing its stem.
// Cells are min-max scaled over the whole matrix (not per row) to 0..255
// grayscale. Rounding: nearest integer, ties away from zero. A constant
// matrix has no spread and maps to all zeros; the sidecar records the rule
// along with the min and max actually used.
HeatmapFiles emit_heatmap(const ad::Mat& matrix, const std::filesystem::path& path);

} // namespace knpl::heatmap
