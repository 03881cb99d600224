#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ocogan {

// Checkpoint container, little-endian throughout:
//
//   magic        8 bytes  "OCOGANCK"
//   version      u32      1
//   count        u32      number of sections
//   count x section:
//     name_len   u32
//     name       name_len bytes, UTF-8 (e.g. "gen/sg.levels.0.mod1.conv.weight")
//     dtype      u8       0 = float32, 1 = float64, 2 = int64, 3 = uint8
//     ndim       u8
//     dims       ndim x i64
//     size       u64      payload bytes
//     payload    row-major element data
//   crc32        u32      zlib CRC-32 of every preceding byte
struct Section {
  std::string name;
  torch::Tensor tensor;
};

class CheckpointFile {
 public:
  void add(std::string name, const torch::Tensor& tensor);
  void add_bytes(std::string name, const std::string& bytes);

  const std::vector<Section>& sections() const { return sections_; }
  // nullptr when absent
  const Section* find(const std::string& name) const;
  const torch::Tensor& tensor(const std::string& name) const;
  std::string bytes(const std::string& name) const;

  std::vector<uint8_t> encode() const;
  static CheckpointFile decode(std::span<const uint8_t> data);

 private:
  std::vector<Section> sections_;
};

inline constexpr uint32_t kCheckpointVersion = 1;

// Writes to a temporary sibling and renames, so a failed write never clobbers the target.
void write_checkpoint_file(const std::string& path, const CheckpointFile& file);
CheckpointFile read_checkpoint_file(const std::string& path);

}  // namespace ocogan
