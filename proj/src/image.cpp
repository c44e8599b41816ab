#include "defleye/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace defleye {

namespace {

uint16_t clamp_u16(double v) {
    const double x = std::clamp(v, 0.0, 1.0) * 65535.0;
    return static_cast<uint16_t>(x + 0.5);
}

void put_u32(std::string& out, uint32_t v) {  // big-endian (PNG)
    out.push_back(static_cast<char>(v >> 24));
    out.push_back(static_cast<char>(v >> 16));
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v));
}

void write_u32_le(std::ofstream& f, uint32_t v) {
    char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                 static_cast<char>(v >> 24)};
    f.write(b, 4);
}

uint32_t read_u32_le(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_pgm16(const std::string& path, const Image& image) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for writing: " + path);
    f << "P5\n" << image.width << " " << image.height << "\n65535\n";
    std::vector<unsigned char> row(static_cast<size_t>(image.width) * 2);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const uint16_t v = clamp_u16(image.at(x, y));
            row[2 * x] = static_cast<unsigned char>(v >> 8);
            row[2 * x + 1] = static_cast<unsigned char>(v & 0xff);
        }
        f.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!f) throw Error("write failed: " + path);
}

Image read_pgm16(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw Error("not a P5 PGM: " + path);
    auto next_int = [&f, &path]() {
        int v;
        // skip whitespace and '#' comments
        for (;;) {
            int c = f.peek();
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
        if (!(f >> v)) throw Error("bad PGM header: " + path);
        return v;
    };
    const int w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 65535) throw Error("expected 16-bit PGM: " + path);
    f.get();  // single whitespace after maxval
    Image img(w, h);
    std::vector<unsigned char> row(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), row.size());
        if (!f) throw Error("truncated PGM: " + path);
        for (int x = 0; x < w; ++x) {
            const uint16_t v = static_cast<uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
            img.at(x, y) = v / 65535.0;
        }
    }
    return img;
}

void write_png8(const std::string& path, const Image& image) {
    const int w = image.width, h = image.height;
    std::vector<unsigned char> raw(static_cast<size_t>(h) * (w + 1));
    for (int y = 0; y < h; ++y) {
        raw[static_cast<size_t>(y) * (w + 1)] = 0;  // filter: none
        for (int x = 0; x < w; ++x) {
            const double v = std::clamp(image.at(x, y), 0.0, 1.0);
            raw[static_cast<size_t>(y) * (w + 1) + 1 + x] =
                static_cast<unsigned char>(v * 255.0 + 0.5);
        }
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("png deflate failed");
    comp.resize(comp_len);

    auto chunk = [](const char type[4], const std::string& payload) {
        std::string out;
        put_u32(out, static_cast<uint32_t>(payload.size()));
        std::string body(type, 4);
        body += payload;
        out += body;
        const uLong crc = crc32(0, reinterpret_cast<const Bytef*>(body.data()),
                                static_cast<uInt>(body.size()));
        put_u32(out, static_cast<uint32_t>(crc));
        return out;
    };

    std::string ihdr;
    put_u32(ihdr, static_cast<uint32_t>(w));
    put_u32(ihdr, static_cast<uint32_t>(h));
    ihdr += '\x08';  // bit depth
    ihdr += '\x00';  // grayscale
    ihdr += '\x00';
    ihdr += '\x00';
    ihdr += '\x00';

    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for writing: " + path);
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    f.write(reinterpret_cast<const char*>(sig), 8);
    std::string out = chunk("IHDR", ihdr);
    out += chunk("IDAT", std::string(reinterpret_cast<char*>(comp.data()), comp.size()));
    out += chunk("IEND", "");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("write failed: " + path);
}

void ChannelStack::add(const std::string& tag, std::vector<double> plane) {
    if (tag.size() != 4) throw Error("channel tag must be 4 chars: " + tag);
    if (plane.size() != static_cast<size_t>(width) * height)
        throw Error("channel plane size mismatch for tag " + tag);
    tags.push_back(tag);
    planes.push_back(std::move(plane));
}

bool ChannelStack::has(const std::string& tag) const {
    for (const auto& t : tags)
        if (t == tag) return true;
    return false;
}

const std::vector<double>& ChannelStack::plane(const std::string& tag) const {
    for (size_t i = 0; i < tags.size(); ++i)
        if (tags[i] == tag) return planes[i];
    throw Error("missing channel: " + tag);
}

void write_channels(const std::string& path, const ChannelStack& stack) {
    if (stack.magic.size() != 4) throw Error("container magic must be 4 chars");
    if (stack.tags.size() > 12) throw Error("container supports at most 12 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for writing: " + path);
    char header[64];
    std::memset(header, 0, sizeof(header));
    std::memcpy(header, stack.magic.data(), 4);
    f.write(header, 4);
    write_u32_le(f, static_cast<uint32_t>(stack.width));
    write_u32_le(f, static_cast<uint32_t>(stack.height));
    write_u32_le(f, static_cast<uint32_t>(stack.tags.size()));
    char tagblock[48];
    std::memset(tagblock, 0, sizeof(tagblock));
    for (size_t i = 0; i < stack.tags.size(); ++i)
        std::memcpy(tagblock + 4 * i, stack.tags[i].data(), 4);
    f.write(tagblock, sizeof(tagblock));
    for (const auto& plane : stack.planes)
        f.write(reinterpret_cast<const char*>(plane.data()),
                static_cast<std::streamsize>(plane.size() * sizeof(double)));
    if (!f) throw Error("write failed: " + path);
}

ChannelStack read_channels(const std::string& path, const std::string& expected_magic) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    ChannelStack stack;
    stack.magic.assign(magic, 4);
    if (!expected_magic.empty() && stack.magic != expected_magic)
        throw Error("bad magic in " + path + ": got '" + stack.magic + "', want '" +
                    expected_magic + "'");
    stack.width = static_cast<int>(read_u32_le(f));
    stack.height = static_cast<int>(read_u32_le(f));
    const uint32_t count = read_u32_le(f);
    if (count > 12) throw Error("corrupt channel count in " + path);
    char tagblock[48];
    f.read(tagblock, sizeof(tagblock));
    const size_t n = static_cast<size_t>(stack.width) * stack.height;
    for (uint32_t i = 0; i < count; ++i) {
        stack.tags.emplace_back(tagblock + 4 * i, 4);
        std::vector<double> plane(n);
        f.read(reinterpret_cast<char*>(plane.data()),
               static_cast<std::streamsize>(n * sizeof(double)));
        if (!f) throw Error("truncated container: " + path);
        stack.planes.push_back(std::move(plane));
    }
    return stack;
}

}  // namespace defleye
