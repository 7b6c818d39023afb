#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "mixseg/labelmap.hpp"
#include "mixseg/tensor.hpp"

namespace mixseg {

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& ctx) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw RuntimeAbort("truncated file while reading " + ctx);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

inline float read_f32(std::istream& is, const std::string& ctx) {
    const std::uint32_t u = read_u32(is, ctx);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace detail

// --- binary tensor format (.img): "MSTEN1", rank, dims, f32 data, all LE ---

inline constexpr char kTensorMagic[6] = {'M', 'S', 'T', 'E', 'N', '1'};

inline void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeAbort("cannot open " + path.string() + " for writing");
    os.write(kTensorMagic, 6);
    detail::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
    for (float v : t.data) detail::write_f32(os, v);
    if (!os) throw RuntimeAbort("write failed for " + path.string());
}

inline Tensor<float> read_tensor_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeAbort("cannot open " + path.string());
    char magic[6];
    if (!is.read(magic, 6) || std::memcmp(magic, kTensorMagic, 6) != 0)
        throw RuntimeAbort("bad tensor magic in " + path.string());
    const std::uint32_t rank = detail::read_u32(is, path.string());
    if (rank > 8) throw RuntimeAbort("implausible tensor rank in " + path.string());
    Shape shape(rank);
    for (auto& d : shape) d = detail::read_u32(is, path.string());
    Tensor<float> t(shape);
    for (auto& v : t.data) v = detail::read_f32(is, path.string());
    return t;
}

// --- PPM (P6) / PGM (P5), 8-bit ---

inline std::uint8_t to_byte(float v) {
    const float s = v * 255.0f + 0.5f;
    return static_cast<std::uint8_t>(s <= 0.0f ? 0.0f : (s >= 255.0f ? 255.0f : s));
}

inline void write_ppm(const std::filesystem::path& path, const Tensor<float>& img) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw ConfigError("write_ppm expects [3,H,W], got " + shape_str(img.shape));
    const std::size_t H = img.dim(1), W = img.dim(2);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeAbort("cannot open " + path.string() + " for writing");
    os << "P6\n" << W << " " << H << "\n255\n";
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const char b = static_cast<char>(to_byte(img.at3(c, y, x)));
                os.write(&b, 1);
            }
    if (!os) throw RuntimeAbort("write failed for " + path.string());
}

inline void write_pgm(const std::filesystem::path& path, const LabelMap& lbl) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeAbort("cannot open " + path.string() + " for writing");
    os << "P5\n" << lbl.w << " " << lbl.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(lbl.v.data()),
             static_cast<std::streamsize>(lbl.v.size()));
    if (!os) throw RuntimeAbort("write failed for " + path.string());
}

namespace detail {
inline std::size_t read_pnm_int(std::istream& is, const std::string& ctx) {
    int c = is.get();
    while (c == '#' || std::isspace(c)) {
        if (c == '#')
            while (c != '\n' && c != EOF) c = is.get();
        c = is.get();
    }
    std::size_t v = 0;
    bool any = false;
    while (std::isdigit(c)) {
        v = v * 10 + static_cast<std::size_t>(c - '0');
        any = true;
        c = is.get();
    }
    if (!any) throw RuntimeAbort("malformed PNM header in " + ctx);
    return v;
}
}  // namespace detail

inline LabelMap read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeAbort("cannot open " + path.string());
    char m0 = 0, m1 = 0;
    is.get(m0).get(m1);
    if (m0 != 'P' || m1 != '5') throw RuntimeAbort("not a P5 PGM: " + path.string());
    const std::size_t w = detail::read_pnm_int(is, path.string());
    const std::size_t h = detail::read_pnm_int(is, path.string());
    const std::size_t maxv = detail::read_pnm_int(is, path.string());
    if (maxv != 255) throw RuntimeAbort("unsupported PGM maxval in " + path.string());
    LabelMap lbl(h, w);
    if (!is.read(reinterpret_cast<char*>(lbl.v.data()),
                 static_cast<std::streamsize>(lbl.v.size())))
        throw RuntimeAbort("truncated PGM data in " + path.string());
    return lbl;
}

inline Tensor<float> read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeAbort("cannot open " + path.string());
    char m0 = 0, m1 = 0;
    is.get(m0).get(m1);
    if (m0 != 'P' || m1 != '6') throw RuntimeAbort("not a P6 PPM: " + path.string());
    const std::size_t w = detail::read_pnm_int(is, path.string());
    const std::size_t h = detail::read_pnm_int(is, path.string());
    const std::size_t maxv = detail::read_pnm_int(is, path.string());
    if (maxv != 255) throw RuntimeAbort("unsupported PPM maxval in " + path.string());
    std::vector<unsigned char> raw(w * h * 3);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw RuntimeAbort("truncated PPM data in " + path.string());
    Tensor<float> img({3, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.at3(c, y, x) = raw[(y * w + x) * 3 + c] / 255.0f;
    return img;
}

}  // namespace mixseg
