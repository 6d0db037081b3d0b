#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace eatr::util {

// SHA-1 of the raw bytes, lowercase hex. Used for content hashes in run
// manifests and checkpoint headers (identity, not security).
std::string sha1_hex(std::string_view data);

// Read a whole file; throws MissingArtifactError if it cannot be opened.
std::string read_file(const std::string& path);

// Write via temp file + rename so readers never observe a partial file.
void atomic_write_file(const std::string& path, std::string_view contents);

std::string now_iso8601();

// Splits [0, n) into `workers` contiguous chunks and runs them on threads.
// Chunking depends only on (n, workers), never on the machine, so any
// per-chunk accumulation a caller does stays reproducible across hosts.
// fn(begin, end, chunk_index); chunk_index < workers.
void parallel_for(size_t n, int workers,
                  const std::function<void(size_t, size_t, int)>& fn);

}  // namespace eatr::util
