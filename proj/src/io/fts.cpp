#include "quadbank/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace quadbank::io {
namespace {

static_assert(std::endian::native == std::endian::little, "FTS I/O assumes a little-endian host");
static_assert(std::numeric_limits<float>::is_iec559);

constexpr char kMagic[4] = {'F', 'T', 'E', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("FTS: truncated header");
    return v;
}

}  // namespace

void write_fts(const ad::Tensor& tensor, std::ostream& out) {
    if (ad::shape_size(tensor.shape) != tensor.size()) throw FormatError("FTS: inconsistent tensor");
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (std::size_t d : tensor.shape) {
        if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("FTS: dimension too large");
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    std::vector<float> buf(tensor.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(tensor.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw FormatError("FTS: write failed");
}

ad::Tensor read_fts(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("FTS: bad magic");
    const std::uint32_t version = get_u32(in);
    if (version != kVersion) throw FormatError("FTS: unsupported version " + std::to_string(version));
    const std::uint32_t ndim = get_u32(in);
    if (ndim > 16) throw FormatError("FTS: implausible ndim " + std::to_string(ndim));
    ad::Shape shape(ndim);
    for (auto& d : shape) d = get_u32(in);
    const std::size_t n = ad::shape_size(shape);
    std::vector<float> buf(n);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
        throw FormatError("FTS: truncated data");
    }
    ad::Tensor t(shape, 0.0);
    for (std::size_t i = 0; i < n; ++i) t.data[i] = buf[i];
    return t;
}

void save_fts(const ad::Tensor& tensor, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    write_fts(tensor, out);
}

ad::Tensor load_fts(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return read_fts(in);
}

}  // namespace quadbank::io
