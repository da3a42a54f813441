#include "adaptlm/errors.hpp"

namespace adaptlm {

std::string located(const std::string& path, std::size_t line, const std::string& message) {
  return path + ":" + std::to_string(line) + ": " + message;
}

}  // namespace adaptlm
