#include "dboot/png_io.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "dboot/synth.hpp"

namespace dboot {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back((v >> 24) & 0xFF);
    out.push_back((v >> 16) & 0xFF);
    out.push_back((v >> 8) & 0xFF);
    out.push_back(v & 0xFF);
}

void write_chunk(std::ofstream& f, const char type[4],
                 const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> head;
    put_u32(head, static_cast<std::uint32_t>(data.size()));
    f.write(reinterpret_cast<const char*>(head.data()), 4);
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    f.write(reinterpret_cast<const char*>(body.data()), body.size());
    std::uint32_t crc = crc32(0, body.data(), static_cast<uInt>(body.size()));
    std::vector<std::uint8_t> tail;
    put_u32(tail, crc);
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

void write_png(const std::string& path, int w, int h,
               const std::vector<std::uint8_t>& rgb) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write png: " + path);
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(w));
    put_u32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(f, "IHDR", ihdr);

    // Scanlines with filter byte 0.
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(h) * (3 * w + 1));
    for (int r = 0; r < h; ++r) {
        raw.push_back(0);
        raw.insert(raw.end(), rgb.begin() + static_cast<std::size_t>(r) * 3 * w,
                   rgb.begin() + static_cast<std::size_t>(r + 1) * 3 * w);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()),
                  6) != Z_OK)
        throw IoError("png: zlib compression failed");
    comp.resize(comp_len);
    write_chunk(f, "IDAT", comp);
    write_chunk(f, "IEND", {});
}

std::uint8_t to_byte(double v) {
    v = v < 0 ? 0 : (v > 1 ? 1 : v);
    return static_cast<std::uint8_t>(v * 255.0 + 0.5);
}

}  // namespace

void write_png_rgb(const std::string& path, const std::array<Matrix, 3>& channels) {
    const int h = static_cast<int>(channels[0].rows());
    const int w = static_cast<int>(channels[0].cols());
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                rgb[(static_cast<std::size_t>(r) * w + c) * 3 + ch] =
                    to_byte(channels[ch](r, c));
    write_png(path, w, h, rgb);
}

void write_png_labels(const std::string& path, const Eigen::MatrixXi& labels) {
    const int h = static_cast<int>(labels.rows());
    const int w = static_cast<int>(labels.cols());
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            auto color = class_palette(labels(r, c));
            for (int ch = 0; ch < 3; ++ch)
                rgb[(static_cast<std::size_t>(r) * w + c) * 3 + ch] = to_byte(color[ch]);
        }
    write_png(path, w, h, rgb);
}

}  // namespace dboot
