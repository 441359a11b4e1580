#include "quadbank/geometry.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace quadbank::geometry {
namespace {

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

double parse_double(std::string_view tok, std::size_t line) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ObjParseError(line, "bad number '" + std::string(tok) + "'");
    }
    return v;
}

int parse_index(std::string_view tok, std::size_t num_vertices, std::size_t line) {
    const std::string_view head = tok.substr(0, tok.find('/'));
    long idx = 0;
    const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), idx);
    if (ec != std::errc() || ptr != head.data() + head.size()) {
        throw ObjParseError(line, "bad face index '" + std::string(tok) + "'");
    }
    if (idx == 0) throw ObjParseError(line, "face index 0 (OBJ indices are 1-based)");
    const long resolved = idx > 0 ? idx - 1 : static_cast<long>(num_vertices) + idx;
    if (resolved < 0 || resolved >= static_cast<long>(num_vertices)) {
        throw ObjParseError(line, "face index " + std::to_string(idx) + " out of range");
    }
    return static_cast<int>(resolved);
}

}  // namespace

Mesh read_obj(std::istream& in) {
    Mesh mesh;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line(raw);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        const auto tok = split_ws(line);
        if (tok.empty()) continue;
        if (tok[0] == "v") {
            if (tok.size() != 4 && tok.size() != 5) throw ObjParseError(line_no, "vertex needs 3 coordinates");
            Vec3 v(parse_double(tok[1], line_no), parse_double(tok[2], line_no), parse_double(tok[3], line_no));
            if (!v.allFinite()) throw ObjParseError(line_no, "non-finite vertex");
            mesh.vertices.push_back(v);
        } else if (tok[0] == "f") {
            if (tok.size() < 4) throw ObjParseError(line_no, "face needs at least 3 vertices");
            std::vector<int> idx;
            for (std::size_t k = 1; k < tok.size(); ++k) idx.push_back(parse_index(tok[k], mesh.vertices.size(), line_no));
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
        }
        // vn, vt, o, g, s, usemtl, mtllib and the rest are ignored.
    }
    return mesh;
}

void write_obj(const Mesh& mesh, std::ostream& out) {
    out << std::setprecision(17);
    for (const Vec3& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const Face& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

Mesh load_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read_obj(in);
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_obj(mesh, out);
}

}  // namespace quadbank::geometry
