#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fewbench {

// Error taxonomy. The CLI maps these onto process exit codes:
// UsageError -> 2, NumericError -> 4, everything else here -> 3.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateInputError : std::runtime_error {
    explicit DegenerateInputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CapacityError : std::runtime_error {
    explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataFormatError : std::runtime_error {
    explicit DataFormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a over raw bytes; used for audit hashes of files and config snapshots.
uint64_t fnv1a64(std::string_view bytes);
std::string hex64(uint64_t value);

// Reads a whole file into memory; throws DataFormatError if unreadable.
std::string read_file(const std::string& path);

// Writes via temp file + rename so readers never observe a partial file.
void write_file_atomic(const std::string& path, std::string_view bytes);

uint64_t hash_file(const std::string& path);

}  // namespace fewbench
