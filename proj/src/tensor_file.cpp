#include "afpa/tensor_file.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "afpa/error.hpp"

namespace afpa {

namespace {

constexpr char kMagic[4] = {'A', 'F', 'P', 'T'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    Reader(const std::vector<unsigned char>& bytes, std::size_t end, std::string origin)
        : bytes_(bytes), end_(end), origin_(std::move(origin)) {}

    const unsigned char* take(std::size_t n) {
        if (end_ - pos_ < n) throw CorruptionError(origin_ + ": record runs past end of file");
        const auto* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint8_t u8() { return *take(1); }
    std::uint16_t u16() {
        const auto* p = take(2);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32() {
        const auto* p = take(4);
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    bool done() const { return pos_ == end_; }

private:
    const std::vector<unsigned char>& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
    std::string origin_;
};

}  // namespace

std::uint32_t crc32_of(const unsigned char* data, std::size_t size) {
    uLong crc = crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(crc32(crc, data, static_cast<uInt>(size)));
}

ArrayF32 ArrayF32::from_matrix(const Matrix& m) {
    ArrayF32 a;
    a.dims = {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)};
    a.values.assign(m.data.begin(), m.data.end());
    return a;
}

ArrayF32 ArrayF32::from_tensor(const Tensor& t) {
    ArrayF32 a;
    for (auto d : t.shape()) a.dims.push_back(static_cast<std::uint32_t>(d));
    a.values.assign(t.values().begin(), t.values().end());
    return a;
}

Matrix ArrayF32::to_matrix() const {
    if (dims.size() != 2) throw FormatError("array of rank " + std::to_string(dims.size()) + " is not a matrix");
    Matrix m(dims[0], dims[1]);
    std::copy(values.begin(), values.end(), m.data.begin());
    return m;
}

std::vector<unsigned char> encode_tensors(const TensorMap& tensors) {
    std::vector<unsigned char> out(kMagic, kMagic + 4);
    out.push_back(kTensorFileVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, array] : tensors) {
        if (name.size() > 0xFFFF) throw ContractError("tensor name too long: " + name.substr(0, 32) + "...");
        if (array.dims.size() > 0xFF) throw ContractError("tensor '" + name + "' has too many dimensions");
        std::size_t count = 1;
        for (auto d : array.dims) count *= d;
        if (count != array.values.size()) {
            throw ShapeError("tensor '" + name + "': dims do not match " + std::to_string(array.values.size()) +
                             " values");
        }
        out.push_back(static_cast<unsigned char>(name.size() & 0xFF));
        out.push_back(static_cast<unsigned char>(name.size() >> 8));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<unsigned char>(array.dims.size()));
        for (auto d : array.dims) put_u32(out, d);
        for (float v : array.values) {
            if (!std::isfinite(v)) throw NumericError("tensor '" + name + "' holds a non-finite value");
            std::uint32_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            put_u32(out, bits);
        }
    }
    put_u32(out, crc32_of(out.data(), out.size()));
    return out;
}

TensorMap decode_tensors(const std::vector<unsigned char>& bytes, const std::string& origin) {
    if (bytes.size() < 4 + 1 + 4 + 4) throw CorruptionError(origin + ": file too short for a tensor container");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(origin + ": missing AFPT magic");
    const auto body = bytes.size() - 4;
    Reader tail(bytes, bytes.size(), origin);
    tail.take(body);
    const auto stored_crc = tail.u32();
    if (stored_crc != crc32_of(bytes.data(), body)) throw CorruptionError(origin + ": CRC mismatch");

    Reader in(bytes, body, origin);
    in.take(4);
    const auto version = in.u8();
    if (version != kTensorFileVersion) {
        throw VersionError(origin + ": unsupported tensor file version " + std::to_string(version));
    }
    TensorMap tensors;
    const auto count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = in.u16();
        const auto* name_bytes = in.take(name_len);
        std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
        ArrayF32 array;
        const auto rank = in.u8();
        std::size_t total = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            array.dims.push_back(in.u32());
            total *= array.dims.back();
        }
        if (total > body) throw CorruptionError(origin + ": tensor '" + name + "' larger than the file");
        array.values.resize(total);
        for (auto& v : array.values) {
            auto bits = in.u32();
            std::memcpy(&v, &bits, sizeof v);
        }
        if (!tensors.emplace(std::move(name), std::move(array)).second) {
            throw CorruptionError(origin + ": duplicate tensor name");
        }
    }
    if (!in.done()) throw CorruptionError(origin + ": trailing bytes after last tensor");
    return tensors;
}

void tensor_write(const std::filesystem::path& path, const TensorMap& tensors) {
    const auto bytes = encode_tensors(tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot create " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + path.string());
}

TensorMap tensor_read(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_tensors(bytes, path.string());
}

}  // namespace afpa
