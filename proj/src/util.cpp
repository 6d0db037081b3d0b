#include "eatr/util.hpp"

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <vector>

#include "eatr/errors.hpp"

namespace eatr::util {

namespace {

inline uint32_t rol(uint32_t x, int s) { return (x << s) | (x >> (32 - s)); }

}  // namespace

std::string sha1_hex(std::string_view data) {
  uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u,
                   0xC3D2E1F0u};

  // Message + 0x80 pad + zeros + 64-bit big-endian bit length.
  std::string msg(data);
  const uint64_t bits = uint64_t(msg.size()) * 8;
  msg.push_back(char(0x80));
  while (msg.size() % 64 != 56) msg.push_back('\0');
  for (int i = 7; i >= 0; --i) msg.push_back(char((bits >> (8 * i)) & 0xff));

  for (size_t off = 0; off < msg.size(); off += 64) {
    uint32_t w[80];
    for (int t = 0; t < 16; ++t) {
      const auto* p = reinterpret_cast<const unsigned char*>(msg.data() + off + 4 * t);
      w[t] = (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
             (uint32_t(p[2]) << 8) | uint32_t(p[3]);
    }
    for (int t = 16; t < 80; ++t)
      w[t] = rol(w[t - 3] ^ w[t - 8] ^ w[t - 14] ^ w[t - 16], 1);

    uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
    for (int t = 0; t < 80; ++t) {
      uint32_t f, k;
      if (t < 20) {
        f = (b & c) | (~b & d);
        k = 0x5A827999u;
      } else if (t < 40) {
        f = b ^ c ^ d;
        k = 0x6ED9EBA1u;
      } else if (t < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8F1BBCDCu;
      } else {
        f = b ^ c ^ d;
        k = 0xCA62C1D6u;
      }
      uint32_t tmp = rol(a, 5) + f + e + k + w[t];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = tmp;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
  }

  char out[41];
  std::snprintf(out, sizeof(out), "%08x%08x%08x%08x%08x", h[0], h[1], h[2],
                h[3], h[4]);
  return std::string(out, 40);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void atomic_write_file(const std::string& path, std::string_view contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write file: " + tmp);
    out.write(contents.data(), std::streamsize(contents.size()));
    if (!out) throw FormatError("short write to: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError("rename " + tmp + " -> " + path + ": " + ec.message());
}

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void parallel_for(size_t n, int workers,
                  const std::function<void(size_t, size_t, int)>& fn) {
  if (workers < 1) workers = 1;
  const size_t chunk = (n + size_t(workers) - 1) / size_t(workers);
  if (n == 0) return;
  if (workers == 1 || chunk == n) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors{size_t(workers)};
  pool.reserve(size_t(workers));
  for (int w = 0; w < workers; ++w) {
    const size_t b = std::min(n, size_t(w) * chunk);
    const size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, &errors, b, e, w] {
      try {
        fn(b, e, w);
      } catch (...) {
        errors[size_t(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  // surface the lowest-chunk failure so the reported error is deterministic
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
}

}  // namespace eatr::util
