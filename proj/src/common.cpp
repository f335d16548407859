#include "asckit/common.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>

namespace asckit {

namespace {
std::atomic<int> g_max_threads{static_cast<int>(std::thread::hardware_concurrency())};
}

int max_threads() {
  int n = g_max_threads.load();
  return n > 0 ? n : 1;
}

void set_max_threads(int n) { g_max_threads.store(n > 0 ? n : 1); }

void parallel_for_blocks(std::size_t n,
                         const std::function<void(std::size_t, std::size_t, int)>& fn) {
  const int workers = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(max_threads()), n == 0 ? 1 : n));
  if (workers <= 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (int t = 0; t < workers; ++t) {
    const std::size_t lo = std::min(n, static_cast<std::size_t>(t) * chunk);
    const std::size_t hi = std::min(n, lo + chunk);
    pool.emplace_back([&fn, lo, hi, t] { fn(lo, hi, t); });
  }
  for (auto& th : pool) th.join();
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file for hashing: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[8192];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const auto got = static_cast<std::size_t>(in.gcount());
    for (std::size_t i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (got < sizeof(buf)) break;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace asckit
