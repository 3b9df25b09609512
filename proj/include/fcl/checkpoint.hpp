#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fcl/continual.hpp"
#include "fcl/lora.hpp"
#include "fcl/model.hpp"
#include "fcl/taskgen.hpp"

namespace fcl {

// Binary layout shared by every file kind:
//   magic[4] | u32 format version | u32 length + UTF-8 metadata (JSON) |
//   u32 record count | records
// A tensor record is u32 length + UTF-8 name, u32 rank, u32 dims[rank] and
// little-endian float32 payload. Dataset files carry int32 records instead.
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kMagicKnowledgeBase[] = "CLKB";
inline constexpr char kMagicAdapter[] = "CLAD";
inline constexpr char kMagicDelta[] = "CLDL";
inline constexpr char kMagicDataset[] = "CLDS";

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

std::string serialize_knowledge_base(const KnowledgeBase& kb);
KnowledgeBase deserialize_knowledge_base(const std::string& bytes);
std::string serialize_adapter(const LoraAdapter& adapter);
LoraAdapter deserialize_adapter(const std::string& bytes);
std::string serialize_delta(const DeltaSet& delta);
DeltaSet deserialize_delta(const std::string& bytes);
std::string serialize_dataset(const Dataset& ds);
Dataset deserialize_dataset(const std::string& bytes);

void save_knowledge_base(const std::filesystem::path& path, const KnowledgeBase& kb);
KnowledgeBase load_knowledge_base(const std::filesystem::path& path);
void save_adapter(const std::filesystem::path& path, const LoraAdapter& adapter);
LoraAdapter load_adapter(const std::filesystem::path& path);
void save_delta(const std::filesystem::path& path, const DeltaSet& delta);
DeltaSet load_delta(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

// One file per dataset plus manifest.txt. Returns the written paths.
std::vector<std::filesystem::path> save_suite(const std::filesystem::path& dir, const TaskSuite& suite);

// Resumable stream state: kb.ckpt, running_sum.delta, recent/{i}.adapter
// and state.json (counters, history and the partial report).
void save_progress(const std::filesystem::path& dir, const StreamProgress& p);
StreamProgress load_progress(const std::filesystem::path& dir);

// Turns a row id into a file-name-safe stem.
std::string row_file_stem(const std::string& row);

}  // namespace fcl
