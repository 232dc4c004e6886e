#pragma once
// Process-level settings for long-running executables.

namespace mpn {

/// Keeps freed heap memory mapped instead of returning it to the OS (glibc
/// only; a no-op elsewhere). A forward pass allocates tens of megabytes of
/// short-lived tensors, and by default every pass page-faults them in again.
void retain_freed_memory();

}  // namespace mpn
