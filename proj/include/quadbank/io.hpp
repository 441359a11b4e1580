#pragma once

// File formats shared by the harness, the bank and the CLI.
//
// FTS tensor: magic "FTEN", u32 version (1), u32 ndim, ndim x u32 dims,
// then float32 data; everything little-endian.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "quadbank/autodiff.hpp"

namespace quadbank::io {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_fts(const ad::Tensor& tensor, std::ostream& out);
ad::Tensor read_fts(std::istream& in);
void save_fts(const ad::Tensor& tensor, const std::filesystem::path& path);
ad::Tensor load_fts(const std::filesystem::path& path);

/// 8-bit PNG. `channels` is 1 (gray) or 3 (RGB); values in [0,1] are
/// rounded to the nearest 1/255 step.
void save_png(const std::filesystem::path& path, std::size_t width, std::size_t height, std::size_t channels,
              const std::vector<double>& pixels);

struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<double> pixels;  // row-major, interleaved, in [0,1]
};

Image load_png(const std::filesystem::path& path);

}  // namespace quadbank::io
