#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "ppmn/simd.hpp"

namespace ppmn::simd {

#ifdef PPMN_HAVE_AVX2
const KernelTable& avx2_table_unchecked();
#endif
#ifdef PPMN_HAVE_NEON
const KernelTable& neon_table_unchecked();
#endif

const KernelTable* avx2_table() {
#ifdef PPMN_HAVE_AVX2
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_table_unchecked() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_table() {
#ifdef PPMN_HAVE_NEON
  // Advanced SIMD is mandatory on AArch64.
  return &neon_table_unchecked();
#else
  return nullptr;
#endif
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  if (name == "neon") return Isa::neon;
  throw std::invalid_argument("unknown SIMD variant '" + std::string(name) + "'");
}

namespace {

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return &scalar_table();
    case Isa::avx2:
      return avx2_table();
    case Isa::neon:
      return neon_table();
  }
  return nullptr;
}

const KernelTable* initial_table() {
  if (const char* forced = std::getenv("PPMN_SIMD"); forced != nullptr && *forced != '\0') {
    const KernelTable* table = table_for(parse_isa(forced));
    if (table == nullptr) {
      throw std::invalid_argument(std::string("PPMN_SIMD=") + forced + " is not supported on this CPU");
    }
    return table;
  }
  if (const KernelTable* t = avx2_table()) return t;
  if (const KernelTable* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void select(Isa isa) {
  const KernelTable* table = table_for(isa);
  if (table == nullptr) {
    throw std::invalid_argument("SIMD variant is not available on this build or CPU");
  }
  current().store(table, std::memory_order_relaxed);
}

}  // namespace ppmn::simd
