// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint directory: meta.json plus one binary blob per named parameter.
// Blob layout (little endian): u64 rank, rank x u64 dims, then float32 values
// in row-major order.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lister/autograd.hpp"

namespace lister::checkpoint {

void write_tensor(const std::filesystem::path& file, const Matrix& m);
Matrix read_tensor(const std::filesystem::path& file);

/// File name used for a parameter blob.
std::string blob_name(const std::string& parameter_name);

void save(const std::filesystem::path& dir, const std::vector<const ad::Parameter*>& params, nlohmann::json meta);

struct Loaded {
  nlohmann::json meta;
  std::map<std::string, Matrix> tensors;
};

Loaded load(const std::filesystem::path& dir);

/// Copies loaded tensors into `params`; every parameter must be present with a matching shape.
void assign(const Loaded& loaded, const std::vector<ad::Parameter*>& params);

}  // namespace lister::checkpoint
