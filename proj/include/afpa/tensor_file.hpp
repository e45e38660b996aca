#pragma once

// Binary tensor container ("AFPT").
//
//   magic    "AFPT"
//   version  u8 (= 1)
//   count    u32
//   count x { name_len u16, name bytes, rank u8, dims u32 x rank, payload f32 x prod(dims) }
//   crc32    u32 over every preceding byte
//
// All integers and floats are little-endian; payloads are row-major.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "afpa/matrix.hpp"
#include "afpa/tensor.hpp"

namespace afpa {

inline constexpr std::uint8_t kTensorFileVersion = 1;

struct ArrayF32 {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    static ArrayF32 from_matrix(const Matrix& m);
    static ArrayF32 from_tensor(const Tensor& t);
    Matrix to_matrix() const;
    Shape shape() const { return Shape(dims.begin(), dims.end()); }

    bool operator==(const ArrayF32&) const = default;
};

using TensorMap = std::map<std::string, ArrayF32>;

std::vector<unsigned char> encode_tensors(const TensorMap& tensors);
TensorMap decode_tensors(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>");

void tensor_write(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap tensor_read(const std::filesystem::path& path);

std::uint32_t crc32_of(const unsigned char* data, std::size_t size);

}  // namespace afpa
