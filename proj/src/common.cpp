#include "attnfactor/common.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace attnfactor {

int log_level() {
  static int level = [] {
    const char* env = std::getenv("ATTNFACTOR_LOG");
    if (env == nullptr) return 0;
    std::string v(env);
    if (v == "debug") return 2;
    if (v == "info") return 1;
    return 0;
  }();
  return level;
}

namespace {
std::mutex log_mutex;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) {
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cerr << "[attnfactor] " << msg << "\n";
  }
}

void log_debug(const std::string& msg) {
  if (log_level() >= 2) {
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cerr << "[attnfactor:debug] " << msg << "\n";
  }
}

}  // namespace attnfactor
