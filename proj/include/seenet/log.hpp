#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

// Minimal leveled logging to stderr. Verbosity comes from SEENET_LOG (debug|info|warn|error|off),
// default "warn".
namespace seenet::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline Level parse_level(std::string_view s) {
    if (s == "debug") return Level::debug;
    if (s == "info") return Level::info;
    if (s == "error") return Level::error;
    if (s == "off") return Level::off;
    return Level::warn;
}

inline Level& threshold() {
    static Level level = [] {
        const char* env = std::getenv("SEENET_LOG");
        return env ? parse_level(env) : Level::warn;
    }();
    return level;
}

inline void emit(Level l, std::string_view tag, const std::string& msg) {
    if (l < threshold()) return;
    std::cerr << '[' << tag << "] " << msg << '\n';
}

inline void debug(const std::string& msg) { emit(Level::debug, "debug", msg); }
inline void info(const std::string& msg) { emit(Level::info, "info", msg); }
inline void warn(const std::string& msg) { emit(Level::warn, "warn", msg); }
inline void error(const std::string& msg) { emit(Level::error, "error", msg); }

}  // namespace seenet::log
