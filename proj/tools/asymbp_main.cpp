#include "asymbp/cli.hpp"

#include <iostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Large activation buffers are reallocated every batch; keep them off mmap.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    return asymbp::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
