#pragma once

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace bodygps {

/// Sets flush-to-zero and denormals-are-zero for the current thread while in
/// scope. Late in training, Adam moments and small activations underflow into
/// the subnormal range, where x86 arithmetic runs several times slower.
class FlushDenormalsScope {
public:
#if defined(__SSE__)
    FlushDenormalsScope() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
    ~FlushDenormalsScope() { _mm_setcsr(saved_); }

private:
    unsigned int saved_;
#else
    FlushDenormalsScope() = default;
#endif
public:
    FlushDenormalsScope(const FlushDenormalsScope&) = delete;
    FlushDenormalsScope& operator=(const FlushDenormalsScope&) = delete;
};

}  // namespace bodygps
