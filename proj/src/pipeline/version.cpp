#include "pipeline/version.hpp"

namespace fasdiff {

const char* version() { return "0.1.0"; }

}  // namespace fasdiff
