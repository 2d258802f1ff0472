#pragma once

#include <lowrank/errors.hpp>
#include <lowrank/linalg.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <string>
#include <vector>

namespace lowrank {

/// An 8-bit image as one height x width matrix per channel (1 = gray, 3 = RGB).
struct Image {
    std::vector<Matrix> channels;

    Index height() const { return channels.empty() ? 0 : channels.front().rows(); }
    Index width() const { return channels.empty() ? 0 : channels.front().cols(); }
};

namespace detail {

inline void skip_pnm_space(std::istream &in) {
    while (true) {
        const int c = in.peek();
        if (c == '#') {
            std::string comment;
            std::getline(in, comment);
        } else if (c != EOF && std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

inline long read_pnm_field(std::istream &in, const std::string &where, const char *field) {
    skip_pnm_space(in);
    long value = -1;
    if (!(in >> value) || value <= 0)
        throw FormatError(where + ": bad or missing " + field + " in header");
    return value;
}

inline unsigned char to_byte(double v) {
    if (!std::isfinite(v))
        v = 0.0;
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0)));
}

} // namespace detail

/// Reads a binary PGM (P5) or PPM (P6) file with maxval 255.
inline Image load_image(const std::filesystem::path &path) {
    const std::string where = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError(where + ": cannot open file");
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw FormatError(where + ": not a binary PGM/PPM file (expected P5 or P6)");
    const int nch = magic[1] == '6' ? 3 : 1;
    const long width = detail::read_pnm_field(in, where, "width");
    const long height = detail::read_pnm_field(in, where, "height");
    const long maxval = detail::read_pnm_field(in, where, "maxval");
    if (maxval != 255)
        throw FormatError(where + ": only maxval 255 is supported, got " + std::to_string(maxval));
    if (!std::isspace(in.get()))
        throw FormatError(where + ": header must end with a single whitespace byte");

    std::vector<unsigned char> raw(static_cast<std::size_t>(width * height * nch));
    in.read(reinterpret_cast<char *>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw FormatError(where + ": truncated pixel data");

    Image img;
    img.channels.assign(nch, Matrix(height, width));
    std::size_t pos = 0;
    for (long i = 0; i < height; ++i)
        for (long j = 0; j < width; ++j)
            for (int c = 0; c < nch; ++c)
                img.channels[c](i, j) = raw[pos++];
    return img;
}

/// Writes P5 for one channel and P6 for three; values are rounded and clamped to [0, 255].
inline void save_image(const std::vector<Matrix> &channels, const std::filesystem::path &path) {
    detail::require(channels.size() == 1 || channels.size() == 3, "save_image: expected 1 or 3 channels");
    const Index h = channels.front().rows(), w = channels.front().cols();
    detail::require(h > 0 && w > 0, "save_image: empty image");
    for (const Matrix &c : channels)
        detail::require(c.rows() == h && c.cols() == w, "save_image: channel shape mismatch");

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError(path.string() + ": cannot open file for writing");
    out << (channels.size() == 3 ? "P6" : "P5") << '\n' << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(h * w) * channels.size());
    for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j)
            for (const Matrix &c : channels)
                raw.push_back(detail::to_byte(c(i, j)));
    out.write(reinterpret_cast<const char *>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out)
        throw FormatError(path.string() + ": write failed");
}

inline void save_image(const Image &img, const std::filesystem::path &path) { save_image(img.channels, path); }

} // namespace lowrank
