#pragma once

// ATNS binary tensor container.
//
// Layout (all integers little-endian):
//   magic       4 bytes   "ATNS"
//   version     u32       1
//   dtype_code  u8        0 = f32, 1 = f16
//   ndim        u8        1..8
//   reserved    2 bytes   0
//   dims        ndim x u64
//   payload     row-major elements
//
// The header is exactly 12 + 8 * ndim bytes. f16 payloads are widened to f32
// on read; all analysis happens in f32 or wider.

#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace relcirc::tensor_io {

enum class DType : std::uint8_t { f32 = 0, f16 = 1 };

inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kMaxDims = 8;

std::size_t dtype_size(DType dtype);

struct TensorHeader {
    std::uint32_t version = kVersion;
    DType dtype = DType::f32;
    std::vector<std::uint64_t> dims;

    std::size_t ndim() const { return dims.size(); }
    std::uint64_t element_count() const;
    std::uint64_t payload_bytes() const { return element_count() * dtype_size(dtype); }
    std::size_t header_bytes() const { return 12 + 8 * dims.size(); }

    bool operator==(const TensorHeader&) const = default;
};

// Sidecar metadata stored next to a tensor as "<name>.meta.json".
struct AxisMeta {
    std::vector<std::string> axis_names;
    std::optional<std::uint64_t> branch_split;

    bool operator==(const AxisMeta&) const = default;
};

struct Tensor {
    TensorHeader header;
    std::vector<float> values;

    const std::vector<std::uint64_t>& dims() const { return header.dims; }
};

// IEEE 754 binary16 conversions (round-to-nearest-even on narrowing).
std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

// Serializes a header to its exact on-disk bytes.
std::vector<std::uint8_t> encode_header(const TensorHeader& header);

void write_tensor(const std::string& path, std::span<const std::uint64_t> dims, DType dtype,
                  std::span<const float> values);

TensorHeader read_header(const std::string& path);
Tensor read_tensor(const std::string& path);

// Incremental writer: the header goes out on construction, values are
// appended in row-major order, and finish() checks the element count.
class TensorWriter {
public:
    TensorWriter(const std::string& path, std::vector<std::uint64_t> dims, DType dtype);
    TensorWriter(const TensorWriter&) = delete;
    TensorWriter& operator=(const TensorWriter&) = delete;
    ~TensorWriter();

    void append(std::span<const float> values);
    void finish();

    std::uint64_t written() const { return written_; }

private:
    std::string path_;
    TensorHeader header_;
    std::ofstream out_;
    std::uint64_t written_ = 0;
    bool finished_ = false;
    std::vector<std::uint8_t> scratch_;
};

// A contiguous block of leading-axis rows.
struct Slab {
    std::uint64_t first = 0;   // index of the first leading-axis row
    std::uint64_t count = 0;   // number of leading-axis rows in this slab
    std::vector<std::uint64_t> dims;  // dims with dims[0] == count
    std::span<float> values;  // mutable view of the reader's buffer
};

// Streams a tensor along its leading axis in chunks of `chunk` rows. The slab
// buffer is reused between calls, so a returned Slab is valid only until the
// next call to next().
class SlabReader {
public:
    SlabReader(const std::string& path, std::size_t axis, std::uint64_t chunk);

    const TensorHeader& header() const { return header_; }
    std::uint64_t slab_count() const;
    std::size_t slab_capacity_bytes() const;

    std::optional<Slab> next();

private:
    TensorHeader header_;
    std::ifstream in_;
    std::uint64_t chunk_;
    std::uint64_t row_elements_ = 1;
    std::uint64_t cursor_ = 0;
    std::vector<float> buffer_;
    std::vector<std::uint16_t> half_buffer_;
};

inline SlabReader stream_slices(const std::string& path, std::size_t axis, std::uint64_t chunk) {
    return SlabReader(path, axis, chunk);
}

std::string meta_path_for(const std::string& tensor_path);
void write_meta(const std::string& tensor_path, const AxisMeta& meta);
// Returns nullopt when no sidecar exists.
std::optional<AxisMeta> read_meta(const std::string& tensor_path);
// axis_names, when present, must name every axis.
void validate_meta(const TensorHeader& header, const AxisMeta& meta);

}  // namespace relcirc::tensor_io
