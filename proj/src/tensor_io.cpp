#include "relcirc/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>

#include <json.hpp>

#include "relcirc/errors.hpp"

namespace relcirc::tensor_io {

namespace {

constexpr char kMagic[4] = {'A', 'T', 'N', 'S'};
constexpr const char* kModule = "tensor-io";

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
    }
}

template <typename T>
T get_le(const std::uint8_t* bytes) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return static_cast<T>(v);
}

inline std::uint16_t bswap(std::uint16_t v) { return __builtin_bswap16(v); }
inline std::uint32_t bswap(std::uint32_t v) { return __builtin_bswap32(v); }

// Payload elements are little-endian on disk.
template <typename T>
void to_little_endian(std::span<T> values) {
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& v : values) v = bswap(v);
    }
}

void check_dims(std::span<const std::uint64_t> dims) {
    if (dims.empty() || dims.size() > kMaxDims) {
        throw SizeError(kModule, "ndim must be in 1..8, got " + std::to_string(dims.size()));
    }
    for (auto d : dims) {
        if (d == 0) throw SizeError(kModule, "every dimension must be >= 1");
    }
}

TensorHeader parse_header(std::istream& in, const std::string& path) {
    std::uint8_t fixed[12];
    if (!in.read(reinterpret_cast<char*>(fixed), sizeof(fixed))) {
        throw FormatError(kModule, path + ": truncated header");
    }
    if (std::memcmp(fixed, kMagic, 4) != 0) throw FormatError(kModule, path + ": bad magic");
    TensorHeader header;
    header.version = get_le<std::uint32_t>(fixed + 4);
    if (header.version != kVersion) {
        throw FormatError(kModule, path + ": unsupported version " + std::to_string(header.version));
    }
    const std::uint8_t dtype = fixed[8];
    if (dtype > 1) throw FormatError(kModule, path + ": unsupported dtype " + std::to_string(dtype));
    header.dtype = static_cast<DType>(dtype);
    const std::uint8_t ndim = fixed[9];
    if (ndim < 1 || ndim > kMaxDims) {
        throw FormatError(kModule, path + ": invalid ndim " + std::to_string(ndim));
    }
    std::vector<std::uint8_t> dim_bytes(8 * ndim);
    if (!in.read(reinterpret_cast<char*>(dim_bytes.data()), static_cast<std::streamsize>(dim_bytes.size()))) {
        throw FormatError(kModule, path + ": truncated dims");
    }
    for (std::size_t i = 0; i < ndim; ++i) {
        header.dims.push_back(get_le<std::uint64_t>(dim_bytes.data() + 8 * i));
        if (header.dims.back() == 0) throw FormatError(kModule, path + ": zero dimension");
    }
    return header;
}

std::ifstream open_checked(const std::string& path, TensorHeader& header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(kModule, "cannot open " + path);
    header = parse_header(in, path);
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (!ec && size != header.header_bytes() + header.payload_bytes()) {
        throw SizeError(kModule, path + ": payload is " + std::to_string(size - header.header_bytes()) +
                                     " bytes, header implies " + std::to_string(header.payload_bytes()));
    }
    return in;
}

void read_payload(std::istream& in, DType dtype, std::span<float> out, std::vector<std::uint16_t>& half_scratch,
                  const std::string& path) {
    if (dtype == DType::f32) {
        if (!in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()))) {
            throw FormatError(kModule, path + ": truncated payload");
        }
        if constexpr (std::endian::native == std::endian::big) {
            for (auto& v : out) v = std::bit_cast<float>(bswap(std::bit_cast<std::uint32_t>(v)));
        }
        return;
    }
    half_scratch.resize(out.size());
    if (!in.read(reinterpret_cast<char*>(half_scratch.data()),
                 static_cast<std::streamsize>(half_scratch.size() * sizeof(std::uint16_t)))) {
        throw FormatError(kModule, path + ": truncated payload");
    }
    to_little_endian(std::span<std::uint16_t>(half_scratch));
    std::transform(half_scratch.begin(), half_scratch.end(), out.begin(), half_to_float);
}

}  // namespace

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
        case DType::f32: return 4;
        case DType::f16: return 2;
    }
    throw FormatError(kModule, "unsupported dtype");
}

std::uint64_t TensorHeader::element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::uint16_t float_to_half(float value) {
    const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
    const std::uint32_t sign = (x >> 16) & 0x8000u;
    const std::uint32_t abs = x & 0x7FFFFFFFu;
    if (abs >= 0x7F800000u) {  // inf or nan
        return static_cast<std::uint16_t>(sign | 0x7C00u | (abs > 0x7F800000u ? 0x200u : 0u));
    }
    if (abs >= 0x477FF000u) return static_cast<std::uint16_t>(sign | 0x7C00u);  // overflow
    if (abs < 0x38800000u) {  // subnormal or zero in half
        if (abs < 0x33000000u) return static_cast<std::uint16_t>(sign);
        const std::uint32_t mant = (abs & 0x007FFFFFu) | 0x00800000u;
        const int shift = 126 - static_cast<int>(abs >> 23);
        std::uint32_t h = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1);
        const std::uint32_t half = 1u << (shift - 1);
        if (rem > half || (rem == half && (h & 1u))) ++h;
        return static_cast<std::uint16_t>(sign | h);
    }
    std::uint32_t h = ((abs - 0x38000000u) >> 13);
    const std::uint32_t rem = abs & 0x1FFFu;
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
    return static_cast<std::uint16_t>(sign | h);
}

float half_to_float(std::uint16_t bits) {
    const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
    const std::uint32_t exp = (bits >> 10) & 0x1Fu;
    std::uint32_t mant = bits & 0x3FFu;
    std::uint32_t out;
    if (exp == 0) {
        if (mant == 0) {
            out = sign;
        } else {
            int e = -1;
            do {
                ++e;
                mant <<= 1;
            } while ((mant & 0x400u) == 0);
            out = sign | static_cast<std::uint32_t>(127 - 15 - e) << 23 | (mant & 0x3FFu) << 13;
        }
    } else if (exp == 0x1F) {
        out = sign | 0x7F800000u | (mant << 13);
    } else {
        out = sign | (exp + 112) << 23 | (mant << 13);
    }
    return std::bit_cast<float>(out);
}

std::vector<std::uint8_t> encode_header(const TensorHeader& header) {
    check_dims(header.dims);
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_le<std::uint32_t>(out, header.version);
    out.push_back(static_cast<std::uint8_t>(header.dtype));
    out.push_back(static_cast<std::uint8_t>(header.dims.size()));
    out.push_back(0);
    out.push_back(0);
    for (auto d : header.dims) put_le<std::uint64_t>(out, d);
    return out;
}

TensorWriter::TensorWriter(const std::string& path, std::vector<std::uint64_t> dims, DType dtype)
    : path_(path) {
    check_dims(dims);
    header_.dims = std::move(dims);
    header_.dtype = dtype;
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError(kModule, "cannot open " + path + " for writing");
    const auto bytes = encode_header(header_);
    out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TensorWriter::~TensorWriter() = default;

void TensorWriter::append(std::span<const float> values) {
    if (finished_) throw IoError(kModule, path_ + ": append after finish");
    if (written_ + values.size() > header_.element_count()) {
        throw SizeError(kModule, path_ + ": payload exceeds header element count " +
                                     std::to_string(header_.element_count()));
    }
    if (header_.dtype == DType::f32 && std::endian::native == std::endian::little) {
        out_.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    } else if (header_.dtype == DType::f32) {
        scratch_.resize(values.size() * 4);
        for (std::size_t i = 0; i < values.size(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(values[i]);
            for (int b = 0; b < 4; ++b) scratch_[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
        }
        out_.write(reinterpret_cast<const char*>(scratch_.data()), static_cast<std::streamsize>(scratch_.size()));
    } else {
        scratch_.resize(values.size() * 2);
        for (std::size_t i = 0; i < values.size(); ++i) {
            const auto bits = float_to_half(values[i]);
            scratch_[2 * i] = static_cast<std::uint8_t>(bits & 0xFF);
            scratch_[2 * i + 1] = static_cast<std::uint8_t>(bits >> 8);
        }
        out_.write(reinterpret_cast<const char*>(scratch_.data()), static_cast<std::streamsize>(scratch_.size()));
    }
    if (!out_) throw IoError(kModule, path_ + ": write failed");
    written_ += values.size();
}

void TensorWriter::finish() {
    if (finished_) return;
    finished_ = true;
    if (written_ != header_.element_count()) {
        out_.close();
        throw SizeError(kModule, path_ + ": wrote " + std::to_string(written_) + " elements, header declares " +
                                     std::to_string(header_.element_count()));
    }
    out_.close();
    if (!out_) throw IoError(kModule, path_ + ": close failed");
}

void write_tensor(const std::string& path, std::span<const std::uint64_t> dims, DType dtype,
                  std::span<const float> values) {
    check_dims(dims);
    TensorHeader header;
    header.dims.assign(dims.begin(), dims.end());
    if (header.element_count() != values.size()) {
        throw SizeError(kModule, "dims imply " + std::to_string(header.element_count()) + " elements, payload has " +
                                     std::to_string(values.size()));
    }
    TensorWriter writer(path, header.dims, dtype);
    writer.append(values);
    writer.finish();
}

TensorHeader read_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(kModule, "cannot open " + path);
    return parse_header(in, path);
}

Tensor read_tensor(const std::string& path) {
    Tensor tensor;
    auto in = open_checked(path, tensor.header);
    tensor.values.resize(tensor.header.element_count());
    std::vector<std::uint16_t> scratch;
    read_payload(in, tensor.header.dtype, tensor.values, scratch, path);
    return tensor;
}

SlabReader::SlabReader(const std::string& path, std::size_t axis, std::uint64_t chunk) : chunk_(chunk) {
    if (axis != 0) {
        throw UnsupportedError(kModule, "streaming is only supported along the leading axis, got axis " +
                                            std::to_string(axis));
    }
    if (chunk == 0) throw InputError(kModule, "chunk size must be >= 1");
    in_ = open_checked(path, header_);
    for (std::size_t i = 1; i < header_.dims.size(); ++i) row_elements_ *= header_.dims[i];
    chunk_ = std::min(chunk_, header_.dims[0]);
}

std::uint64_t SlabReader::slab_count() const { return (header_.dims[0] + chunk_ - 1) / chunk_; }

std::size_t SlabReader::slab_capacity_bytes() const {
    return static_cast<std::size_t>(chunk_ * row_elements_ * sizeof(float));
}

std::optional<Slab> SlabReader::next() {
    if (cursor_ >= header_.dims[0]) return std::nullopt;
    const std::uint64_t rows = std::min(chunk_, header_.dims[0] - cursor_);
    buffer_.resize(rows * row_elements_);
    read_payload(in_, header_.dtype, buffer_, half_buffer_, "slab stream");
    Slab slab;
    slab.first = cursor_;
    slab.count = rows;
    slab.dims = header_.dims;
    slab.dims[0] = rows;
    slab.values = buffer_;
    cursor_ += rows;
    return slab;
}

std::string meta_path_for(const std::string& tensor_path) {
    std::filesystem::path p(tensor_path);
    p.replace_extension(".meta.json");
    return p.string();
}

void write_meta(const std::string& tensor_path, const AxisMeta& meta) {
    nlohmann::json j;
    j["axis_names"] = meta.axis_names;
    if (meta.branch_split) j["branch_split"] = *meta.branch_split;
    std::ofstream out(meta_path_for(tensor_path));
    if (!out) throw IoError(kModule, "cannot write " + meta_path_for(tensor_path));
    out << j.dump() << '\n';
}

void validate_meta(const TensorHeader& header, const AxisMeta& meta) {
    if (!meta.axis_names.empty() && meta.axis_names.size() != header.dims.size()) {
        throw FormatError(kModule, "axis_names has " + std::to_string(meta.axis_names.size()) +
                                       " entries for a tensor of rank " + std::to_string(header.dims.size()));
    }
}

std::optional<AxisMeta> read_meta(const std::string& tensor_path) {
    const auto path = meta_path_for(tensor_path);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    AxisMeta meta;
    try {
        const auto j = nlohmann::json::parse(in);
        meta.axis_names = j.value("axis_names", std::vector<std::string>{});
        if (j.contains("branch_split") && !j["branch_split"].is_null()) {
            meta.branch_split = j["branch_split"].get<std::uint64_t>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(kModule, path + ": " + e.what());
    }
    return meta;
}

}  // namespace relcirc::tensor_io
