#include "musedance/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <unordered_map>

namespace musedance {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
    (void)png;
    throw std::runtime_error(std::string("libpng: ") + message);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

std::uint8_t to_byte_signed(float v) {
    const double scaled = (std::clamp(static_cast<double>(v), -1.0, 1.0) + 1.0) * 127.5;
    return static_cast<std::uint8_t>(std::lround(scaled));
}

float from_byte_signed(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: 1 or 3 channels required");
    FilePtr file(std::fopen(path.string().c_str(), "wb"));
    if (!file) throw std::runtime_error("write_png: cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    std::vector<png_byte> rows(static_cast<std::size_t>(img.height) * img.width * img.channels);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const float v = img.pixels[i];
        rows[i] = img.channels == 3 ? to_byte_signed(v)
                                    : static_cast<png_byte>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
    std::vector<png_bytep> row_ptrs(img.height);
    for (int y = 0; y < img.height; ++y) row_ptrs[y] = rows.data() + static_cast<std::size_t>(y) * img.width * img.channels;
    try {
        png_init_io(png, file.get());
        png_set_IHDR(png, info, img.width, img.height, 8, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        png_write_image(png, row_ptrs.data());
        png_write_end(png, nullptr);
    } catch (const std::runtime_error& e) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: " + path.string() + ": " + e.what());
    }
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.string().c_str(), "rb"));
    if (!file) throw std::runtime_error("read_png: cannot open " + path.string());
    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw std::runtime_error("read_png: not a PNG file: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    Image img;
    try {
        png_init_io(png, file.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
        const int color = png_get_color_type(png, info);
        if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        png_read_update_info(png, info);
        const int width = static_cast<int>(png_get_image_width(png, info));
        const int height = static_cast<int>(png_get_image_height(png, info));
        const int channels = png_get_channels(png, info);
        if (channels != 1 && channels != 3) throw std::runtime_error("unsupported channel layout");
        std::vector<png_byte> rows(static_cast<std::size_t>(height) * width * channels);
        std::vector<png_bytep> row_ptrs(height);
        for (int y = 0; y < height; ++y) row_ptrs[y] = rows.data() + static_cast<std::size_t>(y) * width * channels;
        png_read_image(png, row_ptrs.data());
        img = Image(height, width, channels);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            img.pixels[i] = channels == 3 ? from_byte_signed(rows[i]) : static_cast<float>(rows[i]) / 255.0f;
        }
    } catch (const std::runtime_error& e) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: " + path.string() + ": " + e.what());
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

namespace {

class BitWriter {
  public:
    void put(unsigned code, int bits) {
        acc_ |= static_cast<std::uint32_t>(code) << nbits_;
        nbits_ += bits;
        while (nbits_ >= 8) {
            bytes.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
            acc_ >>= 8;
            nbits_ -= 8;
        }
    }
    void flush() {
        if (nbits_ > 0) bytes.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
        acc_ = 0;
        nbits_ = 0;
    }
    std::vector<std::uint8_t> bytes;

  private:
    std::uint32_t acc_ = 0;
    int nbits_ = 0;
};

std::vector<std::uint8_t> lzw_encode(const std::vector<std::uint8_t>& indices, int min_code_size) {
    const unsigned clear = 1u << min_code_size;
    const unsigned eoi = clear + 1;
    BitWriter out;
    std::unordered_map<std::uint32_t, unsigned> table;
    unsigned next = eoi + 1;
    int width = min_code_size + 1;
    out.put(clear, width);
    if (indices.empty()) {
        out.put(eoi, width);
        out.flush();
        return out.bytes;
    }
    unsigned prefix = indices[0];
    for (std::size_t i = 1; i < indices.size(); ++i) {
        const std::uint8_t k = indices[i];
        const std::uint32_t key = (prefix << 8) | k;
        auto it = table.find(key);
        if (it != table.end()) {
            prefix = it->second;
            continue;
        }
        out.put(prefix, width);
        if (next < 4096) {
            table.emplace(key, next);
            if (next == (1u << width) && width < 12) ++width;
            ++next;
        } else {
            out.put(clear, width);
            table.clear();
            next = eoi + 1;
            width = min_code_size + 1;
        }
        prefix = k;
    }
    out.put(prefix, width);
    out.put(eoi, width);
    out.flush();
    return out.bytes;
}

}  // namespace

void write_gif(const std::filesystem::path& path, const std::vector<Image>& frames, double fps) {
    if (frames.empty()) throw std::invalid_argument("write_gif: no frames");
    const int w = frames.front().width, h = frames.front().height;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_gif: cannot open " + path.string());
    auto u16 = [&](unsigned v) {
        out.put(static_cast<char>(v & 0xff));
        out.put(static_cast<char>((v >> 8) & 0xff));
    };
    out.write("GIF89a", 6);
    u16(w);
    u16(h);
    out.put(static_cast<char>(0xf7));  // global table, 8 bits colour resolution, 256 entries
    out.put(0);
    out.put(0);
    for (int i = 0; i < 256; ++i) {
        int r = 0, g = 0, b = 0;
        if (i < 252) {
            r = (i / 42) * 51;
            g = ((i / 6) % 7) * 255 / 6;
            b = (i % 6) * 51;
        }
        out.put(static_cast<char>(r));
        out.put(static_cast<char>(g));
        out.put(static_cast<char>(b));
    }
    // Netscape looping extension
    out.put(0x21);
    out.put(static_cast<char>(0xff));
    out.put(11);
    out.write("NETSCAPE2.0", 11);
    out.put(3);
    out.put(1);
    u16(0);
    out.put(0);

    const unsigned delay = static_cast<unsigned>(std::lround(100.0 / std::max(fps, 1e-3)));
    for (const auto& f : frames) {
        if (f.width != w || f.height != h || f.channels != 3) throw std::invalid_argument("write_gif: inconsistent frames");
        out.put(0x21);
        out.put(static_cast<char>(0xf9));
        out.put(4);
        out.put(0);
        u16(delay);
        out.put(0);
        out.put(0);

        out.put(0x2c);
        u16(0);
        u16(0);
        u16(w);
        u16(h);
        out.put(0);
        std::vector<std::uint8_t> indices(static_cast<std::size_t>(w) * h);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const int r = std::lround(to_byte_signed(f.at(y, x, 0)) / 51.0);
                const int g = std::lround(to_byte_signed(f.at(y, x, 1)) * 6 / 255.0);
                const int b = std::lround(to_byte_signed(f.at(y, x, 2)) / 51.0);
                indices[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>(r * 42 + g * 6 + b);
            }
        }
        out.put(8);
        const auto data = lzw_encode(indices, 8);
        for (std::size_t pos = 0; pos < data.size(); pos += 255) {
            const std::size_t n = std::min<std::size_t>(255, data.size() - pos);
            out.put(static_cast<char>(n));
            out.write(reinterpret_cast<const char*>(data.data() + pos), static_cast<std::streamsize>(n));
        }
        out.put(0);
    }
    out.put(0x3b);
    if (!out) throw std::runtime_error("write_gif: write failed for " + path.string());
}

}  // namespace musedance
