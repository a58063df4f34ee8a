// Feeds random and mutated frames to every decoder. Any exception other than
// WireError, or a crash, fails the run.
//
//   fuzz_wire [iterations]          default 1,000,000
//   CHAINOBS_FUZZ_SECONDS=3600      run for a wall-clock budget instead

#include "support/fuzz_cases.hpp"

#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv)
{
    std::uint64_t iterations = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1'000'000;
    double budget = 0;
    if (const char* s = std::getenv("CHAINOBS_FUZZ_SECONDS")) budget = std::atof(s);

    auto o = fuzz::run(iterations, budget);
    if (!o.failure.empty()) {
        std::printf("FAIL fuzz_wire: unexpected %s after %llu inputs\n", o.failure.c_str(),
                    static_cast<unsigned long long>(o.inputs));
        return 1;
    }
    std::printf("PASS fuzz_wire: %llu inputs, %llu decodes ok, %llu typed rejections, 0 crashes, %.1f s\n",
                static_cast<unsigned long long>(o.inputs), static_cast<unsigned long long>(o.counters.ok),
                static_cast<unsigned long long>(o.counters.rejected), o.seconds);
    return 0;
}
