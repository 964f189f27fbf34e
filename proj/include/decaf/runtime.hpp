#pragma once

namespace decaf {

// Keeps freed training buffers in the heap instead of returning them to the
// OS after every step. No-op outside glibc.
void tune_allocator();

}  // namespace decaf
