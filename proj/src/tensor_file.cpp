#include "retrofit/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "retrofit/error.hpp"

namespace retrofit {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'F', 'T'};
constexpr const char* kManifestHeader = "retrofit-weights 1";

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return v;
}

Tensor make(DType t, std::vector<std::uint32_t> dims) {
  Tensor out;
  out.dtype = t;
  out.dims = std::move(dims);
  out.payload.reserve(out.count() * dtype_size(t));
  return out;
}

void check_count(const Tensor& t, std::size_t n) {
  if (t.count() != n) {
    throw InvalidArgument("tensor dims hold " + std::to_string(t.count()) + " values, got " +
                          std::to_string(n));
  }
}

void read_exact(std::istream& in, void* dst, std::size_t n, const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw IoError(std::string("truncated tensor file while reading ") + what);
  }
}

std::string shape_string(const std::vector<std::uint32_t>& dims) {
  if (dims.empty()) return "scalar";
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(dims[i]);
  }
  return s;
}

std::vector<std::uint32_t> parse_shape(const std::string& s) {
  if (s == "scalar") return {};
  std::vector<std::uint32_t> dims;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      dims.push_back(static_cast<std::uint32_t>(std::stoul(part)));
    } catch (const std::exception&) {
      throw IoError("bad shape '" + s + "' in weight manifest");
    }
  }
  return dims;
}

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kI32: return 4;
    case DType::kU8: return 1;
  }
  throw InvalidArgument("unknown dtype");
}

std::string_view to_string(DType t) {
  switch (t) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kI32: return "i32";
    case DType::kU8: return "u8";
  }
  return "unknown";
}

DType parse_dtype(std::string_view name) {
  for (DType t : {DType::kF32, DType::kF64, DType::kI32, DType::kU8}) {
    if (to_string(t) == name) return t;
  }
  throw IoError("unknown dtype '" + std::string(name) + "'");
}

std::size_t Tensor::count() const {
  std::size_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

Tensor Tensor::from_f64(std::vector<std::uint32_t> dims, std::span<const double> values) {
  Tensor t = make(DType::kF64, std::move(dims));
  check_count(t, values.size());
  for (double v : values) put_le(t.payload, std::bit_cast<std::uint64_t>(v));
  return t;
}

Tensor Tensor::from_f32(std::vector<std::uint32_t> dims, std::span<const double> values) {
  Tensor t = make(DType::kF32, std::move(dims));
  check_count(t, values.size());
  for (double v : values) put_le(t.payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return t;
}

Tensor Tensor::from_i32(std::vector<std::uint32_t> dims, std::span<const std::int32_t> values) {
  Tensor t = make(DType::kI32, std::move(dims));
  check_count(t, values.size());
  for (std::int32_t v : values) put_le(t.payload, static_cast<std::uint32_t>(v));
  return t;
}

Tensor Tensor::from_u8(std::vector<std::uint32_t> dims, std::span<const std::uint8_t> values) {
  Tensor t = make(DType::kU8, std::move(dims));
  check_count(t, values.size());
  t.payload.assign(values.begin(), values.end());
  return t;
}

std::vector<double> Tensor::to_f64() const {
  const std::size_t n = count();
  std::vector<double> out(n);
  const std::uint8_t* p = payload.data();
  for (std::size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case DType::kF64: out[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i)); break;
      case DType::kF32: out[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i)); break;
      case DType::kI32:
        out[i] = static_cast<std::int32_t>(get_le<std::uint32_t>(p + 4 * i));
        break;
      case DType::kU8: out[i] = p[i]; break;
    }
  }
  return out;
}

std::vector<std::int32_t> Tensor::to_i32() const {
  if (dtype != DType::kI32 && dtype != DType::kU8) {
    throw InvalidArgument("tensor of dtype " + std::string(to_string(dtype)) +
                          " is not an integer tensor");
  }
  const std::size_t n = count();
  std::vector<std::int32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = dtype == DType::kU8
                 ? payload[i]
                 : static_cast<std::int32_t>(get_le<std::uint32_t>(payload.data() + 4 * i));
  }
  return out;
}

std::size_t encoded_size(const Tensor& t) { return 8 + 4 * t.dims.size() + t.payload.size(); }

void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.dims.size() > 255) throw InvalidArgument("tensor has too many dimensions");
  if (t.payload.size() != t.count() * dtype_size(t.dtype)) {
    throw InvalidArgument("tensor payload length does not match its dims");
  }
  std::vector<std::uint8_t> header(kMagic, kMagic + 4);
  put_le(header, kTensorFileVersion);
  header.push_back(static_cast<std::uint8_t>(t.dtype));
  header.push_back(static_cast<std::uint8_t>(t.dims.size()));
  for (std::uint32_t d : t.dims) put_le(header, d);
  out.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(t.payload.data()),
            static_cast<std::streamsize>(t.payload.size()));
  if (!out) throw IoError("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  std::uint8_t head[8];
  read_exact(in, head, sizeof head, "header");
  if (std::memcmp(head, kMagic, 4) != 0) throw IoError("not a tensor file (bad magic)");
  const auto version = get_le<std::uint16_t>(head + 4);
  if (version != kTensorFileVersion) {
    throw IoError("unsupported tensor file version " + std::to_string(version));
  }
  if (head[6] < 1 || head[6] > 4) throw IoError("unknown dtype code " + std::to_string(head[6]));
  Tensor t;
  t.dtype = static_cast<DType>(head[6]);
  t.dims.resize(head[7]);
  for (std::uint32_t& d : t.dims) {
    std::uint8_t b[4];
    read_exact(in, b, 4, "dims");
    d = get_le<std::uint32_t>(b);
  }
  t.payload.resize(t.count() * dtype_size(t.dtype));
  read_exact(in, t.payload.data(), t.payload.size(), "payload");
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

Tensor tensor_from_map(const DenseMap& map) {
  std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(map.height()),
                                  static_cast<std::uint32_t>(map.width()),
                                  static_cast<std::uint32_t>(map.channels())};
  return map.precision() == Precision::kSingle ? Tensor::from_f32(std::move(dims), map.values())
                                               : Tensor::from_f64(std::move(dims), map.values());
}

DenseMap map_from_tensor(const Tensor& t, MapKind kind) {
  if (t.dims.size() != 3 && t.dims.size() != 2) {
    throw InvalidArgument("a dense map tensor needs 2 or 3 dims, got " +
                          std::to_string(t.dims.size()));
  }
  const int c = t.dims.size() == 3 ? static_cast<int>(t.dims[2]) : 1;
  return DenseMap(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), c, kind, t.to_f64(),
                  t.dtype == DType::kF32 ? Precision::kSingle : Precision::kDouble);
}

void save_map(const std::filesystem::path& path, const DenseMap& map) {
  save_tensor(path, tensor_from_map(map));
}

DenseMap load_map(const std::filesystem::path& path, MapKind kind) {
  return map_from_tensor(load_tensor(path), kind);
}

Tensor tensor_from_selection(const PixelSelection& sel) {
  std::vector<std::int32_t> v;
  v.reserve(sel.size() * 3);
  for (std::size_t i = 0; i < sel.size(); ++i) {
    v.push_back(sel.coords[i].row);
    v.push_back(sel.coords[i].col);
    v.push_back(sel.is_core[i]);
  }
  return Tensor::from_i32({static_cast<std::uint32_t>(sel.size()), 3}, v);
}

PixelSelection selection_from_tensor(const Tensor& t, int height, int width) {
  if (t.dims.size() != 2 || t.dims[1] != 3) throw InvalidArgument("selection tensor must be N x 3");
  const auto v = t.to_i32();
  PixelSelection sel;
  sel.height = height;
  sel.width = width;
  for (std::size_t i = 0; i < t.dims[0]; ++i) {
    const Coord c{v[i * 3], v[i * 3 + 1]};
    if (c.row < 0 || c.col < 0 || c.row >= height || c.col >= width) {
      throw InvalidInput("selection pixel " + pixel_name(c.row, c.col) + " is out of bounds");
    }
    if (!sel.coords.empty() && !(sel.coords.back() < c)) {
      throw InvalidInput("selection coordinates are not sorted and unique");
    }
    sel.coords.push_back(c);
    sel.is_core.push_back(v[i * 3 + 2] != 0 ? 1 : 0);
  }
  return sel;
}

void write_manifest(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  std::ostringstream header;
  header << kManifestHeader << "\ncount " << tensors.size() << "\n";
  std::size_t offset = 0;
  for (const NamedTensor& nt : tensors) {
    if (nt.name.empty() || nt.name.find_first_of(" \t\n") != std::string::npos) {
      throw InvalidArgument("tensor name '" + nt.name + "' is not a single token");
    }
    header << nt.name << ' ' << to_string(nt.tensor.dtype) << ' ' << shape_string(nt.tensor.dims)
           << ' ' << offset << '\n';
    offset += encoded_size(nt.tensor);
  }
  header << "end\n";
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const NamedTensor& nt : tensors) write_tensor(out, nt.tensor);
  if (!out) throw IoError("failed writing weight manifest");
}

std::vector<NamedTensor> read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw IoError("not a weight manifest (expected '" + std::string(kManifestHeader) + "')");
  }
  std::size_t count = 0;
  {
    std::string word;
    if (!std::getline(in, line) || !(std::istringstream(line) >> word >> count) || word != "count") {
      throw IoError("weight manifest is missing its count line");
    }
  }
  struct Entry {
    std::string name;
    DType dtype;
    std::vector<std::uint32_t> dims;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw IoError("weight manifest ends inside its header");
    std::istringstream ls(line);
    std::string name, dtype, shape;
    std::size_t offset = 0;
    if (!(ls >> name >> dtype >> shape >> offset)) {
      throw IoError("malformed weight manifest line: " + line);
    }
    entries.push_back({name, parse_dtype(dtype), parse_shape(shape), offset});
  }
  if (!std::getline(in, line) || line != "end") throw IoError("weight manifest lacks 'end'");

  std::vector<NamedTensor> out;
  std::size_t offset = 0;
  for (const Entry& e : entries) {
    if (e.offset != offset) throw IoError("weight manifest offset mismatch at " + e.name);
    Tensor t = read_tensor(in);
    if (t.dtype != e.dtype || t.dims != e.dims) {
      throw IoError("tensor " + e.name + " does not match its manifest entry");
    }
    offset += encoded_size(t);
    out.push_back({e.name, std::move(t)});
  }
  return out;
}

}  // namespace retrofit
