#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lord/tensor.hpp"

namespace lord {

inline constexpr char kCheckpointMagic[4] = {'L', 'R', 'D', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Ordered key/value metadata stored as "key=value" lines after the tensors.
using Metadata = std::map<std::string, std::string>;

struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> tensors;  // in file order
    Metadata metadata;

    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::map<std::string, Tensor> as_map() const;
};

// Serialize to bytes. A "payload_hash" entry over all tensor bytes is added
// to the metadata so payload tampering is detected on read.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

// Atomic: writes "<path>.tmp" then renames over path.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// FNV-1a over arbitrary bytes.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xCBF29CE484222325ULL);
std::string hex64(std::uint64_t v);

// Atomic text write shared by the report writers.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace lord
