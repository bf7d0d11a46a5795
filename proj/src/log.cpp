#include "dsm/log.hpp"

#include <iostream>
#include <mutex>

namespace dsm {

namespace {

std::mutex g_mutex;

LogSink& sink() {
  static LogSink s = [](LogLevel level, std::string_view msg) {
    std::clog << (level == LogLevel::kWarning ? "[warn] " : "[info] ") << msg << '\n';
  };
  return s;
}

void emit(LogLevel level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (sink()) sink()(level, message);
}

}  // namespace

LogSink set_log_sink(LogSink s) {
  std::lock_guard lock(g_mutex);
  auto previous = std::move(sink());
  sink() = std::move(s);
  return previous;
}

void log_info(std::string_view message) { emit(LogLevel::kInfo, message); }
void log_warning(std::string_view message) { emit(LogLevel::kWarning, message); }

}  // namespace dsm
