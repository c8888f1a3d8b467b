#pragma once

// Line-delimited JSON logs: {"ts", "level", "stage", "msg", ...fields}.

#include <iosfwd>
#include <mutex>
#include <string>
#include <string_view>

#include <json.hpp>

namespace ctgraph {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };
LogLevel parse_log_level(const std::string& s);

class Logger {
 public:
  static Logger& instance();

  void set_level(LogLevel l) { level_ = l; }
  LogLevel level() const { return level_; }
  // Defaults to std::cerr. The stream must outlive the logger's use of it.
  void set_stream(std::ostream* out);

  void log(LogLevel l, std::string_view stage, std::string_view msg,
           const nlohmann::json& fields = nlohmann::json::object());

 private:
  Logger();
  LogLevel level_ = LogLevel::info;
  std::ostream* out_;
  std::mutex mu_;
};

inline void log_info(std::string_view stage, std::string_view msg, const nlohmann::json& f = nlohmann::json::object()) {
  Logger::instance().log(LogLevel::info, stage, msg, f);
}
inline void log_warn(std::string_view stage, std::string_view msg, const nlohmann::json& f = nlohmann::json::object()) {
  Logger::instance().log(LogLevel::warn, stage, msg, f);
}
inline void log_error(std::string_view stage, std::string_view msg, const nlohmann::json& f = nlohmann::json::object()) {
  Logger::instance().log(LogLevel::error, stage, msg, f);
}
inline void log_debug(std::string_view stage, std::string_view msg, const nlohmann::json& f = nlohmann::json::object()) {
  Logger::instance().log(LogLevel::debug, stage, msg, f);
}

}  // namespace ctgraph
