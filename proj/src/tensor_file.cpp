#include "cfr/tensor_file.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <set>

#include "cfr/error.hpp"

namespace cfr {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'R', 'T'};

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool has(std::size_t n) const { return bytes_.size() - pos_ >= n; }
  std::uint8_t u8() { return bytes_[pos_++]; }
  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors) {
  std::set<std::string> seen;
  for (const auto& nt : tensors) {
    if (!seen.insert(nt.name).second) throw InputError("duplicate tensor name '" + nt.name + "'");
    if (nt.name.size() > 0xffff) throw InputError("tensor name too long: " + nt.name.substr(0, 32) + "...");
    if (nt.tensor.empty()) throw InputError("tensor '" + nt.name + "' is empty");
    if (nt.tensor.rank() > 0xff) throw InputError("tensor '" + nt.name + "' has too many dimensions");
    for (auto d : nt.tensor.dims()) {
      if (d > 0xffffffffULL) throw InputError("tensor '" + nt.name + "' extent exceeds u32");
    }
  }
  if (tensors.size() > 0xffffffffULL) throw InputError("too many tensors");

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u8(out, kTensorFileVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    put_u16(out, static_cast<std::uint16_t>(nt.name.size()));
    out.insert(out.end(), nt.name.begin(), nt.name.end());
    put_u8(out, static_cast<std::uint8_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.dims()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : nt.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (!in.has(4) || in.str(4) != std::string(kMagic, 4)) throw FormatError("not a CFRT tensor file (bad magic)");
  if (!in.has(5)) throw FormatError("CFRT header truncated");
  const std::uint8_t version = in.u8();
  if (version != kTensorFileVersion) {
    throw FormatError("unsupported CFRT version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32();

  std::vector<NamedTensor> out;
  std::set<std::string> seen;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string label = "entry " + std::to_string(e);
    if (!in.has(2)) throw CorruptionError(label + ": truncated name length");
    const std::uint16_t name_len = in.u16();
    if (!in.has(name_len)) throw CorruptionError(label + ": truncated name");
    std::string name = in.str(name_len);
    const std::string where = label + " '" + name + "'";
    if (!seen.insert(name).second) throw CorruptionError(where + ": duplicate name");
    if (!in.has(1)) throw CorruptionError(where + ": truncated rank");
    const std::uint8_t ndim = in.u8();
    if (ndim == 0) throw CorruptionError(where + ": zero-rank tensor");
    if (!in.has(4ULL * ndim)) throw CorruptionError(where + ": truncated dims");
    std::vector<std::size_t> dims(ndim);
    std::size_t count_values = 1;
    for (auto& d : dims) {
      d = in.u32();
      if (d == 0) throw CorruptionError(where + ": zero extent");
      count_values *= d;
      if (count_values > in.remaining()) throw CorruptionError(where + ": truncated payload");
    }
    if (!in.has(4 * count_values)) throw CorruptionError(where + ": truncated payload");
    std::vector<double> data(count_values);
    for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(in.u32()));
    out.push_back({std::move(name), Tensor(std::move(dims), std::move(data))});
  }
  if (in.remaining() != 0) throw CorruptionError("trailing bytes after last entry");
  return out;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failed for '" + path.string() + "'");
  return bytes;
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  write_bytes(path, encode_tensors(tensors));
}

std::vector<NamedTensor> read_tensors(const std::filesystem::path& path) {
  return decode_tensors(read_bytes(path));
}

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& nt : tensors) {
    if (nt.name == name) return nt.tensor;
  }
  throw InputError("tensor '" + name + "' not found");
}

}  // namespace cfr
