#include "milhard/common.hpp"

#include <cstdlib>
#include <cstring>
#include <mutex>

namespace milhard {

LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("MILHARD_LOG");
        if (env == nullptr) return LogLevel::info;
        if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
        if (std::strcmp(env, "error") == 0) return LogLevel::error;
        return LogLevel::info;
    }();
    return level;
}

void log_msg(LogLevel level, const std::string& msg) {
    if (static_cast<int>(level) > static_cast<int>(log_level())) return;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    const char* tag = level == LogLevel::error ? "error" : level == LogLevel::info ? "info" : "debug";
    std::fprintf(stderr, "[milhard %s] %s\n", tag, msg.c_str());
}

}  // namespace milhard
