#include "apitrace/parallel.hpp"

#include <cstdlib>
#include <string>

namespace apitrace {

unsigned default_workers() {
  if (const char* env = std::getenv("APITRACE_WORKERS"); env != nullptr && *env != '\0') {
    try {
      const unsigned long n = std::stoul(env);
      if (n > 0) {
        return static_cast<unsigned>(n);
      }
    } catch (const std::exception&) {
      // fall through to the hardware default
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

} // namespace apitrace
