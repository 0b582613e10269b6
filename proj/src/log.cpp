#include "pccs/log.hpp"

#include <atomic>
#include <iostream>

namespace pccs::log {

namespace {
std::atomic<Level> g_level{Level::Warning};

void emit(Level at, const char* tag, std::string_view message) {
  if (at < g_level.load()) return;
  std::cerr << "[" << tag << "] " << message << '\n';
}
}  // namespace

void set_level(Level level) { g_level.store(level); }
Level level() { return g_level.load(); }

void debug(std::string_view message) { emit(Level::Debug, "debug", message); }
void info(std::string_view message) { emit(Level::Info, "info", message); }
void warning(std::string_view message) { emit(Level::Warning, "warn", message); }
void error(std::string_view message) { emit(Level::Error, "error", message); }

}  // namespace pccs::log
