#pragma once

// Checkpoints are a directory holding manifest.json and params.bin.
//
// manifest.json: {"format": "fusionkit-checkpoint", "version": 1,
//                 "config": {...}, "blob": "params.bin", "dtype": "float64-le",
//                 "blocks": [{"name", "shape", "offset", "count"}, ...]}
// params.bin:    every block's values back to back as little-endian IEEE-754
//                doubles; `offset` and `count` are in elements.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <json.hpp>

#include "fusionkit/autodiff.hpp"

namespace fusionkit {

void write_f64_le(std::ostream& out, std::span<const double> values);
std::vector<double> read_f64_le(std::istream& in, std::size_t count);

void save_checkpoint(const std::filesystem::path& dir, const nlohmann::json& config, const ad::ParameterList& params);

/// Returns the stored config without touching any parameters.
nlohmann::json read_checkpoint_config(const std::filesystem::path& dir);

/// Overwrites each parameter's value with the block of the same name. Every
/// parameter must be present with a matching shape.
void load_checkpoint(const std::filesystem::path& dir, const ad::ParameterList& params);

}  // namespace fusionkit
