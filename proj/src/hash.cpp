#include "distlab/hash.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "distlab/random.hpp"

namespace distlab {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::string file_hash_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hash_hex(ss.str());
}

std::uint64_t derive_seed(std::uint64_t parent, std::string_view stream, std::uint64_t index) {
  Rng mix(parent ^ fnv1a64(stream) ^ (index * 0xD1B54A32D192ED03ULL));
  mix.next_u64();
  return mix.next_u64();
}

}  // namespace distlab
