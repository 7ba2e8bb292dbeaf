#pragma once

#include "strainest/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace strainest {

/// Streaming 64-bit FNV-1a hash. Used for container checksums and for the
/// provenance digests that link pipeline artifacts to their inputs.
class Digest {
 public:
  Digest& update(std::span<const std::uint8_t> bytes);
  Digest& update(std::string_view text);
  Digest& update(const Matrix& m);
  Digest& update(const Vector& v);
  Digest& update(double x);
  Digest& update(std::int64_t x);

  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string digest_hex(std::span<const std::uint8_t> bytes);
std::string digest_file(const std::filesystem::path& path);

/// Versioned binary container of named blocks.
///
/// Layout (little-endian):
///   "STRNEST\0"  u32 version  u32 block_count
///   per block:   u32 kind  u32 name_len  name (padded to 8)
///                u64 rows  u64 cols  u64 count  payload (padded to 8)
///   u64 FNV-1a checksum of every preceding byte
///
/// Dense payloads are row-major doubles; sparse payloads are (u64 row,
/// u64 col, f64 value) triplets sorted by (row, col) with duplicates summed.
/// Every block header and payload starts on an 8-byte boundary.
class Container {
 public:
  static constexpr std::uint32_t kVersion = 1;

  enum class Kind : std::uint32_t { Dense = 1, Sparse = 2, Ints = 3, Text = 4 };

  void put(const std::string& name, const Matrix& m);
  void put(const std::string& name, const Vector& v);
  void put(const std::string& name, const SparseMatrix& s);
  void put(const std::string& name, const std::vector<std::int64_t>& ints);
  void put_text(const std::string& name, const std::string& text);
  void put_scalar(const std::string& name, double x);

  bool has(const std::string& name) const { return blocks_.count(name) != 0; }
  Matrix dense(const std::string& name) const;
  Vector vector(const std::string& name) const;
  SparseMatrix sparse(const std::string& name) const;
  std::vector<std::int64_t> ints(const std::string& name) const;
  std::string text(const std::string& name) const;
  double scalar(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static Container parse(std::span<const std::uint8_t> bytes);

  /// Write-temp-then-rename so readers never observe a partial file.
  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  struct Block {
    Kind kind;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<std::uint8_t> payload;
  };
  const Block& get(const std::string& name, Kind kind) const;

  std::map<std::string, Block> blocks_;  // ordered => deterministic bytes
};

/// Atomic whole-file write used by every artifact writer.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace strainest
