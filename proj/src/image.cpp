#include "advlab/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace advlab {

std::size_t Mask::count() const {
    std::size_t n = 0;
    for (auto v : pixels) n += v ? 1 : 0;
    return n;
}

Image clamp01(Image img) {
    for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
    return img;
}

double max_abs_difference(const Image& a, const Image& b) {
    if (a.height != b.height || a.width != b.width) throw std::invalid_argument("image size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
    return m;
}

Image resize_bilinear(const Image& img, int height, int width) {
    if (img.height < 1 || img.width < 1 || height < 1 || width < 1) throw std::invalid_argument("resize_bilinear: empty image");
    Image out(height, width);
    const double sy = static_cast<double>(img.height) / height;
    const double sx = static_cast<double>(img.width) / width;
    for (int i = 0; i < height; ++i) {
        const double v = std::clamp((i + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
        const int i0 = static_cast<int>(std::floor(v));
        const int i1 = std::min(i0 + 1, img.height - 1);
        const double fy = v - i0;
        for (int j = 0; j < width; ++j) {
            const double u = std::clamp((j + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
            const int j0 = static_cast<int>(std::floor(u));
            const int j1 = std::min(j0 + 1, img.width - 1);
            const double fx = u - j0;
            out.at(i, j) = (1 - fy) * ((1 - fx) * img.at(i0, j0) + fx * img.at(i0, j1)) +
                           fy * ((1 - fx) * img.at(i1, j0) + fx * img.at(i1, j1));
        }
    }
    return out;
}

namespace {

void write_bytes(const std::filesystem::path& path, int h, int w, const std::vector<unsigned char>& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "P5\n" << w << ' ' << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

// Skips whitespace and '#' comments in a PNM header.
int read_header_int(std::istream& is) {
    for (;;) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    int v = 0;
    if (!(is >> v)) throw std::runtime_error("malformed PGM header");
    return v;
}

} // namespace

void write_pgm(const std::filesystem::path& path, const Image& img) {
    std::vector<unsigned char> bytes(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
    }
    write_bytes(path, img.height, img.width, bytes);
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
    std::vector<unsigned char> bytes(mask.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.pixels[i] ? 255 : 0;
    write_bytes(path, mask.height, mask.width, bytes);
}

Image read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::string magic(2, '\0');
    is.read(magic.data(), 2);
    if (magic != "P5" && magic != "P2") throw std::runtime_error(path.string() + " is not a PGM file");
    const int w = read_header_int(is);
    const int h = read_header_int(is);
    const int maxval = read_header_int(is);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw std::runtime_error("unsupported PGM header in " + path.string());
    Image img(h, w);
    if (magic == "P2") {
        for (double& v : img.pixels) v = static_cast<double>(read_header_int(is)) / maxval;
        return img;
    }
    is.get(); // single whitespace after maxval
    const int bpp = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(img.size() * bpp);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw std::runtime_error("truncated PGM data in " + path.string());
    }
    for (std::size_t i = 0; i < img.size(); ++i) {
        const int v = bpp == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];
        img.pixels[i] = static_cast<double>(v) / maxval;
    }
    return img;
}

Mask read_mask_pgm(const std::filesystem::path& path) {
    const Image img = read_pgm(path);
    Mask m(img.height, img.width);
    for (std::size_t i = 0; i < img.size(); ++i) m.pixels[i] = img.pixels[i] >= 0.5 ? 1 : 0;
    return m;
}

} // namespace advlab
