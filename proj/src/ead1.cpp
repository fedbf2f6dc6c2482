#include "efficientad/ead1.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "efficientad/error.hpp"

namespace ead {
namespace {

constexpr char kMagic[4] = {'E', 'A', 'D', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string string(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void floats(float* dst, std::size_t n, const char* what) {
    need(n * 4, what);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(bytes_[pos_ + 4 * i + b]) << (8 * b);
      }
      dst[i] = std::bit_cast<float>(bits);
    }
    pos_ += n * 4;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("EAD1 truncated while reading ") + what + " at byte " +
                        std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Ead1File::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r.tensor;
  }
  return nullptr;
}

const Tensor& Ead1File::get(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw FormatError("EAD1 record '" + name + "' missing (role " + role + ")");
  return *t;
}

std::vector<std::uint8_t> encode_ead1(const Ead1File& file) {
  std::set<std::string> names;
  for (const auto& r : file.records) {
    if (!names.insert(r.name).second) throw FormatError("duplicate EAD1 record '" + r.name + "'");
  }
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kEad1Version);
  put_string(out, file.role);
  put_u32(out, static_cast<std::uint32_t>(file.records.size()));
  for (const auto& r : file.records) {
    put_string(out, r.name);
    put_u32(out, static_cast<std::uint32_t>(r.tensor.rank()));
    for (std::int64_t d : r.tensor.dims()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : r.tensor.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Ead1File decode_ead1(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("not an EAD1 file (bad magic)");
  const std::uint32_t version = in.u32("version");
  if (version != kEad1Version) {
    throw FormatError("unsupported EAD1 version " + std::to_string(version));
  }
  Ead1File file;
  file.role = in.string("role");
  const std::uint32_t count = in.u32("record count");
  std::set<std::string> names;
  for (std::uint32_t k = 0; k < count; ++k) {
    Ead1Record r;
    r.name = in.string("record name");
    if (!names.insert(r.name).second) throw FormatError("duplicate EAD1 record '" + r.name + "'");
    const std::uint32_t ndim = in.u32("ndim");
    if (ndim < 1 || ndim > 4) {
      throw FormatError("record '" + r.name + "' has unsupported rank " + std::to_string(ndim));
    }
    std::vector<std::int64_t> dims;
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const std::uint32_t e = in.u32("dims");
      if (e == 0) throw FormatError("record '" + r.name + "' has a zero extent");
      dims.push_back(e);
      n *= e;
      if (n > bytes.size()) throw FormatError("EAD1 truncated: record '" + r.name + "' too large");
    }
    std::vector<float> values(static_cast<std::size_t>(n));
    in.floats(values.data(), values.size(), "payload");
    r.tensor = Tensor(std::move(dims), std::move(values));
    file.records.push_back(std::move(r));
  }
  if (!in.at_end()) throw FormatError("trailing bytes after EAD1 records");
  return file;
}

void write_ead1(const std::string& path, const Ead1File& file) {
  const std::vector<std::uint8_t> bytes = encode_ead1(file);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

Ead1File read_ead1(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_ead1(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_features(const std::string& path, const Tensor& features) {
  require_chw(features, "write_features");
  write_ead1(path, Ead1File{"features", {{"features", features}}});
}

Tensor read_features(const std::string& path, std::int64_t channels, std::int64_t size) {
  Ead1File file = read_ead1(path);
  if (file.role != "features") {
    throw FormatError(path + ": expected role 'features', got '" + file.role + "'");
  }
  const Tensor& t = file.get("features");
  if (t.rank() != 3 || t.channels() != channels || t.height() != size || t.width() != size) {
    throw FormatError(path + ": feature record is " + t.shape_string() + ", expected [" +
                      std::to_string(channels) + "x" + std::to_string(size) + "x" +
                      std::to_string(size) + "]");
  }
  return t;
}

}  // namespace ead
