#include "mpn/runtime.hpp"

#include <cstdlib>  // defines __GLIBC__

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mpn {

void retain_freed_memory() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);  // keep large tensors on the heap
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace mpn
