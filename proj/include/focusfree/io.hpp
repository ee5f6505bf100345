#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include <png.h>

#include "focusfree/errors.hpp"
#include "focusfree/geometry.hpp"
#include "focusfree/grid.hpp"
#include "focusfree/supervision.hpp"
#include "focusfree/tensor.hpp"

namespace focusfree::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    char bytes[4];
    std::memcpy(bytes, &v, 4);
    out.append(bytes, 4);
}

inline void put_f32(std::string& out, float v) {
    char bytes[4];
    std::memcpy(bytes, &v, 4);
    out.append(bytes, 4);
}

class Reader {
public:
    Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    void expect_magic(const char* magic) {
        if (bytes_.compare(0, 4, magic) != 0) {
            throw FormatError(what_ + ": bad magic, expected \"" + magic + "\"");
        }
        pos_ = 4;
    }

    std::uint32_t u32() {
        std::uint32_t v;
        std::memcpy(&v, take(4), 4);
        return v;
    }

    float f32() {
        float v;
        std::memcpy(&v, take(4), 4);
        return v;
    }

    std::string text(std::size_t n) { return {take(n), n}; }

    [[nodiscard]] bool done() const noexcept { return pos_ == bytes_.size(); }
    [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    const char* take(std::size_t n) {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
        }
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---- density maps: "FFDM", u32 width, u32 height, width*height f32 row-major

template <typename T>
std::string encode_density(const Grid<T>& map) {
    std::string out = "FFDM";
    out.reserve(12 + 4 * map.size());
    detail::put_u32(out, static_cast<std::uint32_t>(map.width()));
    detail::put_u32(out, static_cast<std::uint32_t>(map.height()));
    for (auto v : map.values()) {
        detail::put_f32(out, static_cast<float>(v));
    }
    return out;
}

/// Decoded values are the stored f32 values widened to double.
inline DensityMap decode_density(const std::string& bytes, const std::string& what = "density map") {
    detail::Reader r(bytes, what);
    r.expect_magic("FFDM");
    const std::size_t w = r.u32(), h = r.u32();
    if (r.remaining() != 4 * w * h) {
        throw FormatError(what + ": expected " + std::to_string(w * h) + " values");
    }
    DensityMap map(w, h, 0.0);
    for (auto& v : map.values()) {
        v = static_cast<double>(r.f32());
    }
    return map;
}

template <typename T>
void write_density(const std::filesystem::path& path, const Grid<T>& map) {
    write_file(path, encode_density(map));
}

inline DensityMap read_density(const std::filesystem::path& path) {
    return decode_density(read_file(path), path.string());
}

// ---- 8-bit grayscale PNG

inline void write_png_gray8(const std::filesystem::path& path, std::size_t width, std::size_t height,
                            const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != width * height) {
        throw ShapeMismatch("png pixel buffer does not match its size");
    }
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) {
        throw FormatError("cannot write " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw FormatError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(pixels.data() + y * width));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

/// Linear scaling with the map maximum at 255; an all-zero map stays black.
template <typename T>
void write_png(const std::filesystem::path& path, const Grid<T>& map) {
    double peak = 0.0;
    for (auto v : map.values()) {
        peak = std::max(peak, static_cast<double>(v));
    }
    std::vector<std::uint8_t> px(map.size(), 0);
    if (peak > 0.0) {
        for (std::size_t i = 0; i < map.size(); ++i) {
            const double v = std::clamp(static_cast<double>(map.values()[i]) / peak, 0.0, 1.0);
            px[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
        }
    }
    write_png_gray8(path, map.width(), map.height(), px);
}

/// Binary masks map 1 to 255.
inline void write_mask_png(const std::filesystem::path& path, const SegmentationMap& mask) {
    std::vector<std::uint8_t> px(mask.size());
    std::transform(mask.values().begin(), mask.values().end(), px.begin(),
                   [](std::uint8_t v) { return v ? std::uint8_t{255} : std::uint8_t{0}; });
    write_png_gray8(path, mask.width(), mask.height(), px);
}

// ---- checkpoints: "FFCK" then per entry u32 name length, UTF-8 name,
//      u32 rank, rank x u32 dims, f32 data; entries run to end of file

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> values;
    friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

inline std::string encode_checkpoint(const std::vector<NamedArray>& entries) {
    std::string out = "FFCK";
    for (const auto& e : entries) {
        if (e.values.size() != numel(e.shape)) {
            throw ShapeMismatch("checkpoint entry " + e.name + " does not match its shape");
        }
        detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) {
            detail::put_u32(out, static_cast<std::uint32_t>(d));
        }
        for (float v : e.values) {
            detail::put_f32(out, v);
        }
    }
    return out;
}

inline std::vector<NamedArray> decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint") {
    detail::Reader r(bytes, what);
    r.expect_magic("FFCK");
    std::vector<NamedArray> out;
    while (!r.done()) {
        NamedArray e;
        e.name = r.text(r.u32());
        const std::size_t rank = r.u32();
        for (std::size_t i = 0; i < rank; ++i) {
            e.shape.push_back(r.u32());
        }
        e.values.resize(numel(e.shape));
        for (auto& v : e.values) {
            v = r.f32();
        }
        out.push_back(std::move(e));
    }
    return out;
}

// ---- annotations JSON

struct AnnotationRecord {
    std::string image;
    PointSet annotations;
    friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

inline nlohmann::json to_json(const AnnotationRecord& rec) {
    nlohmann::json j;
    j["image"] = rec.image;
    j["width"] = rec.annotations.width;
    j["height"] = rec.annotations.height;
    auto pts = nlohmann::json::array();
    for (const auto& p : rec.annotations.points) {
        pts.push_back({p.x, p.y});
    }
    j["points"] = std::move(pts);
    if (rec.annotations.boxes) {
        auto boxes = nlohmann::json::array();
        for (const auto& b : *rec.annotations.boxes) {
            boxes.push_back({b.x, b.y, b.w, b.h});
        }
        j["boxes"] = std::move(boxes);
    }
    return j;
}

namespace detail {

inline AnnotationRecord record_from_json(const nlohmann::json& j, std::size_t index) {
    const std::string where = "record " + std::to_string(index);
    try {
        AnnotationRecord rec;
        rec.image = j.at("image").get<std::string>();
        rec.annotations.width = j.at("width").get<std::size_t>();
        rec.annotations.height = j.at("height").get<std::size_t>();
        for (const auto& p : j.at("points")) {
            if (!p.is_array() || p.size() != 2) {
                throw FormatError(where + ": each point must be [x, y]");
            }
            rec.annotations.points.push_back({p[0].get<double>(), p[1].get<double>()});
        }
        if (j.contains("boxes")) {
            std::vector<Box> boxes;
            for (const auto& b : j.at("boxes")) {
                if (!b.is_array() || b.size() != 4) {
                    throw FormatError(where + ": each box must be [x, y, w, h]");
                }
                boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
            }
            rec.annotations.boxes = std::move(boxes);
        }
        rec.annotations.validate();
        return rec;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(where + ": " + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(where + ": " + e.what());
    }
}

} // namespace detail

/// Parses either a single annotation object or an array of them. Syntax
/// errors report line and column.
inline std::vector<AnnotationRecord> parse_annotations(const std::string& text, const std::string& what = "annotations") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // Recover the line from the byte offset.
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
        throw FormatError(what + ":" + std::to_string(line) + ": " + e.what());
    }
    std::vector<AnnotationRecord> out;
    if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) {
            out.push_back(detail::record_from_json(j[i], i));
        }
    } else {
        out.push_back(detail::record_from_json(j, 0));
    }
    return out;
}

inline std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path) {
    return parse_annotations(read_file(path), path.string());
}

inline void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records) {
    auto j = nlohmann::json::array();
    for (const auto& r : records) {
        j.push_back(to_json(r));
    }
    write_file(path, j.dump(1) + "\n");
}

} // namespace focusfree::io
