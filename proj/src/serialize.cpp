#include "aseg/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace aseg::io {

namespace {
void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8 & 0xff),
                          (unsigned char)(v >> 16 & 0xff), (unsigned char)(v >> 24 & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return (uint32_t)b[0] | (uint32_t)b[1] << 8 | (uint32_t)b[2] << 16 | (uint32_t)b[3] << 24;
}
}  // namespace

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_tensor: cannot open " + path);
    os.write("ATSR", 4);
    write_u32(os, (uint32_t)t.rank());
    for (int i = 0; i < t.rank(); ++i) write_u32(os, (uint32_t)t.dim(i));
    // x86: native floats are already little-endian
    os.write(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
    if (!os) throw std::runtime_error("save_tensor: write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_tensor: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ATSR", 4) != 0)
        throw std::runtime_error("load_tensor: bad magic in " + path);
    uint32_t rank = read_u32(is);
    if (rank > 8) throw std::runtime_error("load_tensor: implausible rank in " + path);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = (int)read_u32(is);
    std::vector<float> data((size_t)shape_numel(shape));
    is.read(reinterpret_cast<char*>(data.data()), (std::streamsize)(data.size() * sizeof(float)));
    if (!is) throw std::runtime_error("load_tensor: truncated payload in " + path);
    return Tensor::from_data(std::move(shape), std::move(data));
}

void save_pgm(const std::string& path, const std::vector<uint8_t>& pixels, int h, int w) {
    if ((int64_t)pixels.size() != (int64_t)h * w)
        throw std::runtime_error("save_pgm: pixel count mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_pgm: cannot open " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()), (std::streamsize)pixels.size());
    if (!os) throw std::runtime_error("save_pgm: write failed for " + path);
}

std::vector<uint8_t> load_pgm(const std::string& path, int& h, int& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_pgm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw std::runtime_error("load_pgm: not a P5 file: " + path);
    int maxv = 0;
    is >> w >> h >> maxv;
    if (!is || w <= 0 || h <= 0 || maxv != 255)
        throw std::runtime_error("load_pgm: bad header in " + path);
    is.get();  // single whitespace after maxval
    std::vector<uint8_t> pixels((size_t)h * w);
    is.read(reinterpret_cast<char*>(pixels.data()), (std::streamsize)pixels.size());
    if (!is) throw std::runtime_error("load_pgm: truncated payload in " + path);
    return pixels;
}

}  // namespace aseg::io
