#include "mda/version.hpp"

#ifndef MDA_GIT_DESCRIBE
#define MDA_GIT_DESCRIBE "unknown"
#endif

namespace mda {

std::string version_string() { return std::string("mda 0.1.0 (") + MDA_GIT_DESCRIBE + ")"; }

}  // namespace mda
