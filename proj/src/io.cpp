#include "mpn/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "json.hpp"

namespace mpn {

namespace {

static_assert(std::endian::native == std::endian::little, "flow/checkpoint writers assume a little-endian host");

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return f;
}

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T get(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw std::runtime_error("unexpected end of data");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

struct GrayRaster {
    int height = 0;
    int width = 0;
    int depth = 8;
    std::vector<std::uint16_t> values;
};

void png_error_fn(png_structp png, png_const_charp msg) {
    auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
    if (buf) *buf = msg;
    png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

GrayRaster read_png_gray(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw std::runtime_error("libpng: cannot create read struct");
    png_infop info = png_create_info_struct(png);
    GrayRaster r;
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("cannot decode PNG " + path.string() + ": " + err);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error(path.string() + ": expected a grayscale PNG");
    }
    if (depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        depth = 8;
    }
    png_read_update_info(png, info);
    r.height = static_cast<int>(png_get_image_height(png, info));
    r.width = static_cast<int>(png_get_image_width(png, info));
    r.depth = depth;
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * r.height);
    rows.resize(r.height);
    for (int y = 0; y < r.height; ++y) rows[y] = buffer.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    r.values.resize(static_cast<std::size_t>(r.height) * r.width);
    for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) {
            const std::uint8_t* p = rows[y];
            r.values[static_cast<std::size_t>(y) * r.width + x] =
                depth == 16 ? static_cast<std::uint16_t>((p[2 * x] << 8) | p[2 * x + 1]) : p[x];
        }
    }
    return r;
}

void write_png_gray(const std::filesystem::path& path, int height, int width, int depth,
                    const std::vector<std::uint16_t>& values) {
    FilePtr f = open_file(path, "wb");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw std::runtime_error("libpng: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    const std::size_t stride = static_cast<std::size_t>(width) * (depth / 8);
    std::vector<std::uint8_t> buffer(stride * height);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) {
        rows[y] = buffer.data() + y * stride;
        for (int x = 0; x < width; ++x) {
            const std::uint16_t v = values[static_cast<std::size_t>(y) * width + x];
            if (depth == 16) {
                rows[y][2 * x] = static_cast<std::uint8_t>(v >> 8);
                rows[y][2 * x + 1] = static_cast<std::uint8_t>(v & 0xff);
            } else {
                rows[y][x] = static_cast<std::uint8_t>(v);
            }
        }
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("cannot encode PNG " + path.string() + ": " + err);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, width, height, depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

GrayRaster read_pgm(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
        return t;
    };
    if (token() != "P5") throw std::runtime_error(path.string() + ": only binary PGM (P5) is supported");
    GrayRaster r;
    r.width = std::stoi(token());
    r.height = std::stoi(token());
    const int maxval = std::stoi(token());
    ++pos;  // single whitespace before the raster
    if (maxval <= 0 || maxval > 65535) throw std::runtime_error(path.string() + ": bad PGM maxval");
    r.depth = maxval > 255 ? 16 : 8;
    const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
    if (bytes.size() < pos + n * (r.depth / 8)) throw std::runtime_error(path.string() + ": truncated PGM");
    r.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        r.values[i] = r.depth == 16 ? static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1])
                                    : bytes[pos + i];
    }
    // Normalisation below uses the full-scale value of the depth, so rescale
    // non-standard maxvals here.
    const int full = r.depth == 16 ? 65535 : 255;
    if (maxval != full) {
        for (auto& v : r.values) v = static_cast<std::uint16_t>(std::lround(static_cast<double>(v) * full / maxval));
    }
    return r;
}

std::vector<std::uint16_t> quantize(const Image& img, int full_scale) {
    std::vector<std::uint16_t> v(img.size());
    const auto px = img.pixels();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = static_cast<std::uint16_t>(std::lround(std::clamp(px[i], 0.0, 1.0) * full_scale));
    }
    return v;
}

}  // namespace

// ---- raw files ------------------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

// ---- flow -------------------------------------------------------------------------------

std::vector<std::uint8_t> encode_flo(const FlowField& flow) {
    std::vector<std::uint8_t> out;
    out.reserve(12 + 8 * flow.num_pixels());
    for (char c : {'P', 'I', 'E', 'H'}) out.push_back(static_cast<std::uint8_t>(c));
    put<std::int32_t>(out, flow.width());
    put<std::int32_t>(out, flow.height());
    for (int y = 0; y < flow.height(); ++y) {
        for (int x = 0; x < flow.width(); ++x) {
            const Vec2 v = flow(y, x);
            put<float>(out, static_cast<float>(v.dx));
            put<float>(out, static_cast<float>(v.dy));
        }
    }
    return out;
}

FlowField decode_flo(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "PIEH", 4) != 0) {
        throw std::runtime_error("not a .flo file (bad magic)");
    }
    std::size_t pos = 4;
    const auto width = get<std::int32_t>(bytes, pos);
    const auto height = get<std::int32_t>(bytes, pos);
    if (width <= 0 || height <= 0) throw std::runtime_error(".flo: non-positive dimensions");
    if (bytes.size() != 12 + 8 * static_cast<std::size_t>(width) * height) {
        throw std::runtime_error(".flo: payload size does not match dimensions");
    }
    FlowField f(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const float dx = get<float>(bytes, pos);
            const float dy = get<float>(bytes, pos);
            if (!std::isfinite(dx) || !std::isfinite(dy)) throw std::runtime_error(".flo: non-finite displacement");
            f.set(y, x, {dy, dx});
        }
    }
    return f;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) { write_file_bytes(path, encode_flo(flow)); }

FlowField read_flo(const std::filesystem::path& path) { return decode_flo(read_file_bytes(path)); }

// ---- images -------------------------------------------------------------------------------

Image read_image(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    const GrayRaster r = ext == ".pgm" ? read_pgm(path) : read_png_gray(path);
    const double full = r.depth == 16 ? 65535.0 : 255.0;
    std::vector<double> px(r.values.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = r.values[i] / full;
    return Image(r.height, r.width, std::move(px), read_spacing_sidecar(path));
}

void write_png16(const std::filesystem::path& path, const Image& img) {
    write_png_gray(path, img.height(), img.width(), 16, quantize(img, 65535));
}

void write_png8(const std::filesystem::path& path, const Image& img) {
    write_png_gray(path, img.height(), img.width(), 8, quantize(img, 255));
}

void write_pgm16(const std::filesystem::path& path, const Image& img) {
    const std::string header = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n65535\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    for (std::uint16_t v : quantize(img, 65535)) {
        bytes.push_back(static_cast<std::uint8_t>(v >> 8));
        bytes.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
    write_file_bytes(path, bytes);
}

void write_spacing_sidecar(const std::filesystem::path& image_path, Spacing spacing) {
    auto side = image_path;
    side.replace_extension(".json");
    std::ofstream out(side);
    if (!out) throw std::runtime_error("cannot write " + side.string());
    out << nlohmann::json{{"spacing_mm", {spacing.row, spacing.col}}}.dump() << '\n';
}

Spacing read_spacing_sidecar(const std::filesystem::path& image_path) {
    auto side = image_path;
    side.replace_extension(".json");
    if (!std::filesystem::exists(side)) return {};
    std::ifstream in(side);
    const auto j = nlohmann::json::parse(in);
    const auto& s = j.at("spacing_mm");
    return {s.at(0).get<double>(), s.at(1).get<double>()};
}

// ---- masks and colour ---------------------------------------------------------------------------

void write_mask_png(const std::filesystem::path& path, const LabelMask& mask) {
    const auto raw = mask.raw();
    write_png_gray(path, mask.height(), mask.width(), 8, std::vector<std::uint16_t>(raw.begin(), raw.end()));
}

LabelMask read_mask_png(const std::filesystem::path& path) {
    const GrayRaster r = read_png_gray(path);
    if (r.depth != 8) throw std::runtime_error(path.string() + ": masks must be 8-bit");
    std::vector<std::uint8_t> labels(r.values.begin(), r.values.end());
    return LabelMask(r.height, r.width, std::move(labels), read_spacing_sidecar(path));
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& img) {
    FilePtr f = open_file(path, "wb");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw std::runtime_error("libpng: cannot create write struct");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> buffer(img.rgb);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * img.width * 3;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("cannot encode PNG " + path.string() + ": " + err);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace mpn
