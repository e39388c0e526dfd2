#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace crn {

/// Training allocates and frees the same large tensors every step. glibc
/// serves those through mmap by default, which shows up as heavy page-fault
/// time; keep them on the heap instead. No-op elsewhere.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
#endif
}

}  // namespace crn
