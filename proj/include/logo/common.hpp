#pragma once

#include <stdexcept>
#include <string>

namespace logo {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace logo
