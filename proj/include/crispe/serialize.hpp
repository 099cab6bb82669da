#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "crispe/curvature.hpp"
#include "crispe/network.hpp"

namespace crispe {

inline constexpr std::uint32_t kCurvatureFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// Curvature cache "CRVC". Little-endian. Header: magic, version, layer count,
// kind, flags (bit 0: EK-FAC section, bit 1: dense section). Per layer: index,
// d_in, d_out, sample_count, A (d_in^2, column-major), S (d_out^2). Dense
// kinds write zero factors and append the full matrix.
std::string encode_curvature(const CurvatureModel& model);
CurvatureModel decode_curvature(std::string_view bytes);
void write_curvature(const CurvatureModel& model, const std::filesystem::path& path);
CurvatureModel read_curvature(const std::filesystem::path& path);

// Checkpoint "CRSP": magic, version, layer count; per layer d_out, d_in
// (including bias column), activation tag, column-major weights.
std::string encode_checkpoint(const FeedForwardNet& net);
FeedForwardNet decode_checkpoint(std::string_view bytes);
void write_checkpoint(const FeedForwardNet& net, const std::filesystem::path& path);
FeedForwardNet read_checkpoint(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

} // namespace crispe
