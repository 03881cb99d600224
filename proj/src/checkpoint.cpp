#include "ocogan/checkpoint.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ocogan/errors.hpp"

namespace ocogan {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'O', 'C', 'O', 'G', 'A', 'N', 'C', 'K'};

uint8_t dtype_code(torch::Dtype t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    case torch::kUInt8: return 3;
    default: throw InternalError("checkpoint: unsupported tensor dtype");
  }
}

torch::Dtype dtype_from_code(uint8_t c) {
  switch (c) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    case 3: return torch::kUInt8;
    default: throw IntegrityError("checkpoint: unknown dtype code " + std::to_string(c));
  }
}

template <class T>
void put(std::vector<uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> data) : data_(data) {}

  template <class T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }

  const uint8_t* take(std::size_t n) {
    if (n > data_.size() - pos_) throw IntegrityError("checkpoint is truncated");
    const uint8_t* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace

void CheckpointFile::add(std::string name, const torch::Tensor& tensor) {
  sections_.push_back({std::move(name), tensor.detach().cpu().contiguous().clone()});
}

void CheckpointFile::add_bytes(std::string name, const std::string& bytes) {
  auto t = torch::empty({static_cast<int64_t>(bytes.size())}, torch::kUInt8);
  std::memcpy(t.data_ptr<uint8_t>(), bytes.data(), bytes.size());
  sections_.push_back({std::move(name), t});
}

const Section* CheckpointFile::find(const std::string& name) const {
  for (const auto& s : sections_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const torch::Tensor& CheckpointFile::tensor(const std::string& name) const {
  const auto* s = find(name);
  if (!s) throw IntegrityError("checkpoint has no section '" + name + "'");
  return s->tensor;
}

std::string CheckpointFile::bytes(const std::string& name) const {
  const auto& t = tensor(name);
  return std::string(reinterpret_cast<const char*>(t.data_ptr<uint8_t>()), t.numel());
}

std::vector<uint8_t> CheckpointFile::encode() const {
  std::vector<uint8_t> out(kMagic.begin(), kMagic.end());
  put<uint32_t>(out, kCheckpointVersion);
  put<uint32_t>(out, static_cast<uint32_t>(sections_.size()));
  for (const auto& s : sections_) {
    put<uint32_t>(out, static_cast<uint32_t>(s.name.size()));
    out.insert(out.end(), s.name.begin(), s.name.end());
    put<uint8_t>(out, dtype_code(s.tensor.scalar_type()));
    put<uint8_t>(out, static_cast<uint8_t>(s.tensor.dim()));
    for (auto d : s.tensor.sizes()) put<int64_t>(out, d);
    const auto nbytes = static_cast<uint64_t>(s.tensor.nbytes());
    put<uint64_t>(out, nbytes);
    const auto* p = static_cast<const uint8_t*>(s.tensor.data_ptr());
    out.insert(out.end(), p, p + nbytes);
  }
  const uLong crc = crc32(0L, out.data(), static_cast<uInt>(out.size()));
  put<uint32_t>(out, static_cast<uint32_t>(crc));
  return out;
}

CheckpointFile CheckpointFile::decode(std::span<const uint8_t> data) {
  if (data.size() < kMagic.size() + 12 || std::memcmp(data.data(), kMagic.data(), kMagic.size()) != 0) {
    throw IntegrityError("not a checkpoint file (bad magic)");
  }
  const auto body = data.first(data.size() - 4);
  uint32_t stored{};
  std::memcpy(&stored, data.data() + body.size(), 4);
  const auto crc = static_cast<uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size())));
  if (crc != stored) throw IntegrityError("checkpoint checksum mismatch (file is corrupt or partial)");

  Reader r(body);
  r.take(kMagic.size());
  const auto version = r.get<uint32_t>();
  if (version != kCheckpointVersion) {
    throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<uint32_t>();
  CheckpointFile file;
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<uint32_t>();
    std::string name(reinterpret_cast<const char*>(r.take(name_len)), name_len);
    const auto dtype = dtype_from_code(r.get<uint8_t>());
    const auto ndim = r.get<uint8_t>();
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = r.get<int64_t>();
    const auto nbytes = r.get<uint64_t>();
    auto t = torch::empty(dims, dtype);
    if (static_cast<uint64_t>(t.nbytes()) != nbytes) {
      throw IntegrityError("checkpoint section '" + name + "' has inconsistent size");
    }
    std::memcpy(t.data_ptr(), r.take(nbytes), nbytes);
    file.sections_.push_back({std::move(name), std::move(t)});
  }
  if (r.pos() != body.size()) throw IntegrityError("checkpoint has trailing bytes");
  return file;
}

void write_checkpoint_file(const std::string& path, const CheckpointFile& file) {
  const auto bytes = file.encode();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("failed writing checkpoint '" + path + "' (disk full?)");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

CheckpointFile read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return CheckpointFile::decode(bytes);
}

}  // namespace ocogan
