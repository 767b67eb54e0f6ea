#pragma once

namespace fasdiff {

const char* version();

}  // namespace fasdiff
