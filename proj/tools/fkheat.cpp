#include <cstdio>

// Placeholder entry point; the run/validate/report subcommands are attached
// once the suite drivers land.

int main() {
    std::puts("fkheat: suites not wired up yet");
    return 2;
}
