#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels/tables.hpp"

namespace seprep::kernels {
namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("SEPREP_ISA"); env != nullptr && *env != '\0') {
    const Isa requested = parse_isa(env);
    if (isa_available(requested)) return requested;
  }
  return best_isa();
}

std::atomic<Isa>& selected() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

bool isa_available(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(SEPREP_HAVE_AVX2)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Isa::neon:
#if defined(SEPREP_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa best_isa() noexcept {
  if (isa_available(Isa::avx2)) return Isa::avx2;
  if (isa_available(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

Isa active_isa() noexcept { return selected().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw std::invalid_argument("kernel ISA not available: " + std::string(isa_name(isa)));
  }
  selected().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  if (name == "neon") return Isa::neon;
  throw std::invalid_argument("unknown kernel ISA: " + std::string(name));
}

template <>
const KernelTable<float>& table<float>(Isa isa) {
  switch (isa) {
#if defined(SEPREP_HAVE_AVX2)
    case Isa::avx2:
      if (isa_available(isa)) return kAvx2F32;
      break;
#endif
#if defined(SEPREP_HAVE_NEON)
    case Isa::neon:
      return kNeonF32;
#endif
    default:
      break;
  }
  if (isa != Isa::scalar) throw std::invalid_argument("kernel ISA not available");
  return kScalarF32;
}

template <>
const KernelTable<double>& table<double>(Isa isa) {
  switch (isa) {
#if defined(SEPREP_HAVE_AVX2)
    case Isa::avx2:
      if (isa_available(isa)) return kAvx2F64;
      break;
#endif
#if defined(SEPREP_HAVE_NEON)
    case Isa::neon:
      return kNeonF64;
#endif
    default:
      break;
  }
  if (isa != Isa::scalar) throw std::invalid_argument("kernel ISA not available");
  return kScalarF64;
}

}  // namespace seprep::kernels
