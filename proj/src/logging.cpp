#include "ctgraph/logging.hpp"

#include <chrono>
#include <ctime>
#include <iostream>

#include "ctgraph/error.hpp"

namespace ctgraph {

LogLevel parse_log_level(const std::string& s) {
  if (s == "debug") return LogLevel::debug;
  if (s == "info") return LogLevel::info;
  if (s == "warn") return LogLevel::warn;
  if (s == "error") return LogLevel::error;
  if (s == "off") return LogLevel::off;
  throw ValidationError("unknown log level '" + s + "'");
}

Logger& Logger::instance() {
  static Logger logger;
  return logger;
}

Logger::Logger() : out_(&std::cerr) {}

void Logger::set_stream(std::ostream* out) {
  std::lock_guard lock(mu_);
  out_ = out ? out : &std::cerr;
}

void Logger::log(LogLevel l, std::string_view stage, std::string_view msg, const nlohmann::json& fields) {
  if (l < level_ || level_ == LogLevel::off) return;
  static const char* names[] = {"debug", "info", "warn", "error"};
  const auto now = std::chrono::system_clock::now();
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char ts[40];
  std::snprintf(ts, sizeof ts, "%s.%03dZ", buf, static_cast<int>(ms));

  nlohmann::json line{{"ts", ts}, {"level", names[static_cast<int>(l)]}, {"stage", stage}, {"msg", msg}};
  if (fields.is_object())
    for (auto it = fields.begin(); it != fields.end(); ++it) line[it.key()] = it.value();
  std::lock_guard lock(mu_);
  *out_ << line.dump() << '\n';
  out_->flush();
}

}  // namespace ctgraph
