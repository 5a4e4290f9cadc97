#include "knpl/heatmap.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "knpl/error.hpp"

namespace knpl::heatmap {

using ad::Index;

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << body;
    out.flush();
    if (!out) raise(ErrorKind::Io, "short write to " + path.string());
}

} // namespace

ad::Mat activation_matrix(const model::ForwardTrace& trace) {
    if (trace.layers.empty())
        raise(ErrorKind::Config, "activation matrix needs a captured trace");
    const Index d_ff = trace.layers[0].ffn.cols();
    ad::Mat out(static_cast<Index>(trace.layers.size()), d_ff);
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
        const ad::Tensor& ffn = trace.layers[l].ffn;
        out.row(static_cast<Index>(l)) = ffn.mat().row(ffn.rows() - 1);
    }
    return out;
}

HeatmapFiles emit_heatmap(const ad::Mat& matrix, const std::filesystem::path& path) {
    if (matrix.rows() < 1 || matrix.cols() < 1)
        raise(ErrorKind::Shape, "heatmap matrix is empty");
    if (!matrix.allFinite())
        raise(ErrorKind::NumericDomain, "heatmap matrix has non-finite entries");

    const double lo = matrix.minCoeff();
    const double hi = matrix.maxCoeff();
    const double spread = hi - lo;

    const Index rows = matrix.rows();
    const Index cols = matrix.cols();
    std::vector<int> levels(static_cast<std::size_t>(rows * cols), 0);
    if (spread > 0.0) {
        for (Index r = 0; r < rows; ++r)
            for (Index c = 0; c < cols; ++c) {
                const double unit = (matrix(r, c) - lo) / spread;
                long v = std::lround(unit * 255.0);
                if (v < 0) v = 0;
                if (v > 255) v = 255;
                levels[static_cast<std::size_t>(r * cols + c)] = static_cast<int>(v);
            }
    }

    HeatmapFiles files;
    files.pixmap = path;
    files.vector = std::filesystem::path(path).replace_extension(".svg");
    files.sidecar = std::filesystem::path(path).replace_extension(".txt");

    std::string ppm = "P3\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            const std::string v =
                std::to_string(levels[static_cast<std::size_t>(r * cols + c)]);
            if (c > 0) ppm += ' ';
            ppm += v + ' ' + v + ' ' + v;
        }
        ppm += '\n';
    }
    write_file(files.pixmap, ppm);

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " +
                      std::to_string(cols) + " " + std::to_string(rows) + "\" width=\"" +
                      std::to_string(cols * 8) + "\" height=\"" + std::to_string(rows * 8) +
                      "\" shape-rendering=\"crispEdges\">\n";
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) {
            char color[8];
            const int v = levels[static_cast<std::size_t>(r * cols + c)];
            std::snprintf(color, sizeof(color), "#%02x%02x%02x", v, v, v);
            svg += "<rect x=\"" + std::to_string(c) + "\" y=\"" + std::to_string(r) +
                   "\" width=\"1\" height=\"1\" fill=\"" + color + "\"/>\n";
        }
    svg += "</svg>\n";
    write_file(files.vector, svg);

    std::string sidecar;
    sidecar += "rows " + std::to_string(rows) + "\n";
    sidecar += "cols " + std::to_string(cols) + "\n";
    sidecar += "min " + format_double(lo) + "\n";
    sidecar += "max " + format_double(hi) + "\n";
    sidecar += "levels 256\n";
    sidecar += "scaling global-min-max\n";
    sidecar += "rounding nearest-ties-away-from-zero\n";
    sidecar += "constant-matrix all-zero\n";
    write_file(files.sidecar, sidecar);

    return files;
}

} // namespace knpl::heatmap
