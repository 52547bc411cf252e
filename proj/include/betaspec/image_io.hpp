#pragma once

// Binary PGM (P5) / PPM (P6) export of image batches as a tiled grid with
// 2-pixel separators. Values are clamped to [0, 1] and quantized by
// round(v * 255).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace betaspec {

inline std::uint8_t quantize_pixel(double v) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

// images: equal-size square grayscale (channels=1) or interleaved-RGB
// (channels=3) buffers. Layout: row-major tiling, `columns` tiles per row,
// 2-pixel white separators between tiles.
inline void export_image_grid(const std::vector<std::vector<double>>& images, int side,
                              int channels, const std::string& path, int columns) {
    if (images.empty()) throw std::invalid_argument("image grid: no images");
    if (columns < 1) throw std::invalid_argument("image grid: columns must be >= 1");
    if (channels != 1 && channels != 3)
        throw std::invalid_argument("image grid: channels must be 1 or 3");
    const auto pixel_count = static_cast<std::size_t>(side) * side * channels;
    for (const auto& img : images)
        if (img.size() != pixel_count)
            throw std::invalid_argument("image grid: image size mismatch");

    const int n = static_cast<int>(images.size());
    const int cols = std::min(columns, n);
    const int rows = (n + cols - 1) / cols;
    const int sep = 2;
    const int width = cols * side + sep * (cols - 1);
    const int height = rows * side + sep * (rows - 1);

    std::vector<std::uint8_t> canvas(static_cast<std::size_t>(width) * height * channels, 255);
    for (int idx = 0; idx < n; ++idx) {
        const int tr = idx / cols, tc = idx % cols;
        const int y0 = tr * (side + sep), x0 = tc * (side + sep);
        const auto& img = images[static_cast<std::size_t>(idx)];
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                for (int c = 0; c < channels; ++c)
                    canvas[((static_cast<std::size_t>(y0 + y) * width) + (x0 + x)) * channels + c] =
                        quantize_pixel(img[(static_cast<std::size_t>(y) * side + x) * channels + c]);
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("image grid: cannot open " + tmp);
        out << (channels == 1 ? "P5" : "P6") << "\n" << width << " " << height << "\n255\n";
        out.write(reinterpret_cast<const char*>(canvas.data()),
                  static_cast<std::streamsize>(canvas.size()));
        if (!out) throw std::runtime_error("image grid: write failed");
    }
    std::filesystem::rename(tmp, path);
}

struct PgmImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

inline PgmImage load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("pgm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw std::runtime_error("pgm: bad magic");
    PgmImage img;
    int maxval = 0;
    in >> img.width >> img.height >> maxval;
    in.get();  // single whitespace after header
    if (maxval != 255) throw std::runtime_error("pgm: unsupported maxval");
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!in) throw std::runtime_error("pgm: truncated payload");
    return img;
}

}  // namespace betaspec
