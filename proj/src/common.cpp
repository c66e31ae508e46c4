#include "xmodal/common.hpp"

#include <cstdio>

namespace xmodal {

std::string hex_u64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

}  // namespace xmodal
