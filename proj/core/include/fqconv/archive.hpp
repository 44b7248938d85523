// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "fqconv/data.hpp"
#include "fqconv/integer.hpp"
#include "fqconv/network.hpp"

namespace fqconv {

/// Archives are directories holding manifest.json (human-readable, stable key
/// order) and tensors.bin (little-endian arrays addressed by offset, dtype and
/// shape in the manifest). The manifest's checksum is the CRC-32 of tensors.bin.
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kBlobName = "tensors.bin";

enum class ArchiveKind { kNetwork, kInteger, kDataset };

const char* to_string(ArchiveKind kind);

struct NetworkArchive {
  Network net;
  /// Free-form training provenance (stage, seed, parent archive, ...).
  std::map<std::string, std::string> provenance;
};

void save_network(const NetworkArchive& archive, const std::filesystem::path& dir);
void save_network(const Network& net, const std::filesystem::path& dir);
/// Throws DataError when files are missing, malformed or fail the checksum.
NetworkArchive load_network(const std::filesystem::path& dir);

void save_integer_model(const IntegerModel& model, const std::filesystem::path& dir);
IntegerModel load_integer_model(const std::filesystem::path& dir);

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Reads only the manifest header. Throws DataError if `dir` is not an archive.
ArchiveKind archive_kind(const std::filesystem::path& dir);

/// CRC-32 (zlib polynomial) of `bytes`.
uint32_t checksum(const std::string& bytes);

}  // namespace fqconv
