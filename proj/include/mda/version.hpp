#pragma once

#include <string>

namespace mda {

// "mda <semver> (<git describe>)"; the git part is "unknown" outside a checkout.
std::string version_string();

}  // namespace mda
