#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace nicekit::log {

using Sink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& mutex() {
  static std::mutex m;
  return m;
}
inline Sink& sink() {
  static Sink s = [](const std::string& msg) {
    std::cerr << "nicekit: warning: " << msg << '\n';
  };
  return s;
}
}  // namespace detail

/// Replaces the warning sink; returns the previous one.
inline Sink set_warning_sink(Sink sink) {
  std::lock_guard lock(detail::mutex());
  return std::exchange(detail::sink(), std::move(sink));
}

inline void warn(const std::string& msg) {
  std::lock_guard lock(detail::mutex());
  if (detail::sink()) detail::sink()(msg);
}

}  // namespace nicekit::log
