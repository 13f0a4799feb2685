#pragma once

#include "flowtwin/common.hpp"

#include <json.hpp>

#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>

namespace flowtwin {

// Schema-checking accessor for input JSON. Collects every problem with its
// JSON-pointer path instead of stopping at the first one.
class JsonReader {
 public:
  using json = nlohmann::json;

  // Checks that j is an object and has no keys outside `allowed`.
  bool object(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed);

  const json* field(const json& obj, std::string_view key, const std::string& path, bool required);

  std::optional<double> number(const json& obj, std::string_view key, const std::string& path,
                               bool required = true);
  std::optional<long long> integer(const json& obj, std::string_view key, const std::string& path,
                                   bool required = true);
  std::optional<bool> boolean(const json& obj, std::string_view key, const std::string& path,
                              bool required = true);
  // Ids may be written as strings or integers; both come back as strings.
  std::optional<std::string> id(const json& obj, std::string_view key, const std::string& path,
                                bool required = true);
  std::optional<std::string> string(const json& obj, std::string_view key, const std::string& path,
                                    bool required = true);
  const json* array(const json& obj, std::string_view key, const std::string& path, bool required = true);

  std::optional<std::string> id_value(const json& v, const std::string& path);
  std::optional<double> number_value(const json& v, const std::string& path);

  void fail(std::string path, std::string message) { errors_.push_back({std::move(path), std::move(message)}); }
  bool ok() const { return errors_.empty(); }
  const std::vector<FieldError>& errors() const { return errors_; }
  void throw_if_errors() const {
    if (!errors_.empty()) throw ValidationError(errors_);
  }

  static std::string join(const std::string& path, std::string_view key) {
    return path + "/" + std::string(key);
  }
  static std::string join(const std::string& path, std::size_t index) {
    return path + "/" + std::to_string(index);
  }

 private:
  std::vector<FieldError> errors_;
};

// Reads and parses a JSON file; parse errors become a ValidationError at "/".
nlohmann::json read_json_file(const std::string& path);

}  // namespace flowtwin
