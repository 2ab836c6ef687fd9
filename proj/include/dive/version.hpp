#pragma once

namespace dive {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dive
