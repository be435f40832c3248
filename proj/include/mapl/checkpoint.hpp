#pragma once

#include "mapl/config.hpp"
#include "mapl/memory.hpp"
#include "mapl/network.hpp"
#include "mapl/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mapl::ckpt {

// File layout: "MAPLCKPT", u32 format version, u64 header length, a JSON
// header describing every array, then the raw little-endian f64 payload.
inline constexpr std::uint32_t kFormatVersion = 1;

struct NamedArray {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<double> data;
};

struct Archive {
    std::string config_text;
    std::string config_hash;
    int step = 0;
    std::string log_digest;
    std::vector<NamedArray> arrays;

    bool has(std::string_view name) const;
    /// Throws CheckpointError when absent.
    const NamedArray& get(std::string_view name) const;
};

std::string serialize(const Archive& a);
/// Rejects bad magic or an unknown version before touching any array, then
/// checks header bounds and the payload digest.
Archive deserialize(std::string_view bytes, const std::string& source = "<memory>");

void write_file(const Archive& a, const std::filesystem::path& path);
Archive read_file(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the CSV training log.
std::string log_digest(const std::vector<train::LogRow>& log);

Archive pack(const config::RunConfig& cfg, const net::Model& model, const memory::MemoryBank& bank,
             const train::LabelerState* labeler, int step, const std::string& log_digest);

struct Restored {
    config::RunConfig config;
    net::Model model;
    memory::MemoryBank bank;
    std::optional<train::LabelerState> labeler;
    int step = 0;
    std::string log_digest;
};

/// Rebuilds the model from the stored config and overwrites every
/// parameter; a missing, extra or misshapen array is a CheckpointError.
Restored unpack(const Archive& a);

}  // namespace mapl::ckpt
