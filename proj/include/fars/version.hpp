#pragma once

namespace fars {

inline constexpr const char* kVersion = "0.4.0";

}  // namespace fars
