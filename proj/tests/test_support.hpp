#pragma once
// Minimal test harness shared by all test binaries.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

namespace testing {

inline int g_checks = 0;

inline void fail(const char* file, int line, const std::string& msg) {
    std::printf("[FAIL] %s:%d: %s\n", file, line, msg.c_str());
    std::exit(1);
}

inline void section(const char* name) {
    std::printf("-- %s\n", name);
}

inline void done(const char* suite) {
    std::printf("[OK] %s: %d checks passed\n", suite, g_checks);
}

} // namespace testing

#define REQUIRE(cond)                                                          \
    do {                                                                       \
        ++testing::g_checks;                                                   \
        if (!(cond)) testing::fail(__FILE__, __LINE__, "REQUIRE(" #cond ")");  \
    } while (0)

#define REQUIRE_CLOSE(a, b, tol)                                                            \
    do {                                                                                    \
        ++testing::g_checks;                                                               \
        double va_ = (a), vb_ = (b), vt_ = (tol);                                           \
        if (!(std::fabs(va_ - vb_) <= vt_))                                                 \
            testing::fail(__FILE__, __LINE__,                                               \
                          std::string("REQUIRE_CLOSE(" #a ", " #b ") : ") +                 \
                              std::to_string(va_) + " vs " + std::to_string(vb_) +          \
                              " (tol " + std::to_string(vt_) + ")");                        \
    } while (0)

#define REQUIRE_THROWS(expr)                                                                \
    do {                                                                                    \
        ++testing::g_checks;                                                               \
        bool thrown_ = false;                                                               \
        try {                                                                               \
            (void)(expr);                                                                   \
        } catch (const std::exception&) {                                                   \
            thrown_ = true;                                                                 \
        }                                                                                   \
        if (!thrown_) testing::fail(__FILE__, __LINE__, "expected throw: " #expr);          \
    } while (0)
