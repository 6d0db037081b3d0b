#include <atomic>
#include <filesystem>
#include <mutex>
#include <vector>

#include "doctest.h"
#include "eatr/errors.hpp"
#include "eatr/rng.hpp"
#include "eatr/util.hpp"

using namespace eatr;

TEST_CASE("sha1 known vectors") {
  // Published FIPS-180 test vectors.
  CHECK(util::sha1_hex("") == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
  CHECK(util::sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
  CHECK(util::sha1_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "84983e441c3bd26ebaae4aa1f95129e5e54670f1");
  // Length just around the block boundary.
  CHECK(util::sha1_hex(std::string(64, 'a')) ==
        util::sha1_hex(std::string(64, 'a')));
  CHECK(util::sha1_hex(std::string(64, 'a')) !=
        util::sha1_hex(std::string(63, 'a')));
}

TEST_CASE("atomic write then read round-trips and leaves no temp file") {
  auto dir = std::filesystem::temp_directory_path() / "eatr_util_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "f.txt").string();
  util::atomic_write_file(path, "hello\nworld");
  CHECK(util::read_file(path) == "hello\nworld");
  CHECK(!std::filesystem::exists(path + ".tmp"));
  util::atomic_write_file(path, "short");
  CHECK(util::read_file(path) == "short");
  std::filesystem::remove_all(dir);
}

TEST_CASE("read_file on a missing path raises the missing-artifact error") {
  CHECK_THROWS_AS(util::read_file("/nonexistent/eatr/file"), MissingArtifactError);
}

TEST_CASE("parallel_for covers the range exactly once with fixed chunks") {
  for (size_t n : {size_t(0), size_t(1), size_t(7), size_t(8), size_t(100)}) {
    for (int workers : {1, 3, 8}) {
      std::vector<std::atomic<int>> hits(n);
      for (auto& h : hits) h = 0;
      util::parallel_for(n, workers, [&](size_t b, size_t e, int) {
        for (size_t i = b; i < e; ++i) hits[i]++;
      });
      for (size_t i = 0; i < n; ++i) CHECK(hits[i] == 1);
    }
  }
}

TEST_CASE("parallel_for chunk boundaries depend only on n and workers") {
  std::vector<std::pair<size_t, size_t>> chunks1, chunks2;
  std::mutex mu;
  for (auto* out : {&chunks1, &chunks2}) {
    util::parallel_for(103, 8, [&](size_t b, size_t e, int w) {
      std::lock_guard<std::mutex> lk(mu);
      out->resize(std::max(out->size(), size_t(w) + 1));
      (*out)[size_t(w)] = {b, e};
    });
  }
  CHECK(chunks1 == chunks2);
  CHECK(chunks1.size() == 8);
  CHECK(chunks1[0].first == 0);
  CHECK(chunks1.back().second == 103);
}

TEST_CASE("rng is reproducible and distributions behave") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.uniform() == b.uniform());
  }
  Rng c(42), d(43);
  int diff = 0;
  for (int i = 0; i < 100; ++i) diff += c.next_u64() != d.next_u64();
  CHECK(diff > 90);

  Rng r(7);
  double mn = 1e9, mx = -1e9, sum = 0;
  for (int i = 0; i < 10000; ++i) {
    double x = r.uniform(2.0, 5.0);
    mn = std::min(mn, x);
    mx = std::max(mx, x);
    sum += x;
  }
  CHECK(mn >= 2.0);
  CHECK(mx < 5.0);
  CHECK(sum / 10000 == doctest::Approx(3.5).epsilon(0.02));

  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) counts[size_t(r.uniform_int(0, 4))]++;
  for (int k = 0; k < 5; ++k) CHECK(counts[size_t(k)] > 800);

  double m = 0, m2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    m += z;
    m2 += z * z;
  }
  m /= n;
  m2 /= n;
  CHECK(m == doctest::Approx(0.0).epsilon(0.05));
  CHECK(std::abs(m) < 0.05);
  CHECK(m2 - m * m == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("rng state save/restore resumes the exact stream") {
  Rng r(1234);
  for (int i = 0; i < 17; ++i) r.normal();
  auto st = r.save_state();
  std::vector<double> want;
  for (int i = 0; i < 50; ++i) want.push_back(r.normal());
  Rng fresh(1);
  fresh.restore_state(st);
  for (int i = 0; i < 50; ++i) CHECK(fresh.normal() == want[size_t(i)]);
}

TEST_CASE("derived seeds differ per stream") {
  CHECK(derive_seed(42, 0) != derive_seed(42, 1));
  CHECK(derive_seed(42, 0) != derive_seed(43, 0));
  CHECK(derive_seed(42, 7) == derive_seed(42, 7));
}
