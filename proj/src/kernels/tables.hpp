#pragma once

#include "seprep/kernels.hpp"

namespace seprep::kernels {

extern const KernelTable<float> kScalarF32;
extern const KernelTable<double> kScalarF64;

#if defined(SEPREP_HAVE_AVX2)
extern const KernelTable<float> kAvx2F32;
extern const KernelTable<double> kAvx2F64;
#endif

#if defined(SEPREP_HAVE_NEON)
extern const KernelTable<float> kNeonF32;
extern const KernelTable<double> kNeonF64;
#endif

}  // namespace seprep::kernels
