#include "flowtwin/json_reader.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace flowtwin {

bool JsonReader::object(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) {
    fail(path.empty() ? "/" : path, "expected an object");
    return false;
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(join(path, key), "unknown key");
    }
  }
  return true;
}

const nlohmann::json* JsonReader::field(const json& obj, std::string_view key, const std::string& path,
                                        bool required) {
  auto it = obj.find(std::string(key));
  if (it == obj.end() || it->is_null()) {
    if (required) fail(join(path, key), "required field missing");
    return nullptr;
  }
  return &*it;
}

std::optional<double> JsonReader::number_value(const json& v, const std::string& path) {
  if (!v.is_number()) {
    fail(path, "expected a number");
    return std::nullopt;
  }
  const double x = v.get<double>();
  if (!std::isfinite(x)) {
    fail(path, "must be finite");
    return std::nullopt;
  }
  return x;
}

std::optional<double> JsonReader::number(const json& obj, std::string_view key, const std::string& path,
                                         bool required) {
  const json* v = field(obj, key, path, required);
  if (!v) return std::nullopt;
  return number_value(*v, join(path, key));
}

std::optional<long long> JsonReader::integer(const json& obj, std::string_view key, const std::string& path,
                                             bool required) {
  const json* v = field(obj, key, path, required);
  if (!v) return std::nullopt;
  if (!v->is_number_integer()) {
    fail(join(path, key), "expected an integer");
    return std::nullopt;
  }
  return v->get<long long>();
}

std::optional<bool> JsonReader::boolean(const json& obj, std::string_view key, const std::string& path,
                                        bool required) {
  const json* v = field(obj, key, path, required);
  if (!v) return std::nullopt;
  if (!v->is_boolean()) {
    fail(join(path, key), "expected a boolean");
    return std::nullopt;
  }
  return v->get<bool>();
}

std::optional<std::string> JsonReader::id_value(const json& v, const std::string& path) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  fail(path, "expected a string or integer id");
  return std::nullopt;
}

std::optional<std::string> JsonReader::id(const json& obj, std::string_view key, const std::string& path,
                                          bool required) {
  const json* v = field(obj, key, path, required);
  if (!v) return std::nullopt;
  return id_value(*v, join(path, key));
}

std::optional<std::string> JsonReader::string(const json& obj, std::string_view key, const std::string& path,
                                              bool required) {
  const json* v = field(obj, key, path, required);
  if (!v) return std::nullopt;
  if (!v->is_string()) {
    fail(join(path, key), "expected a string");
    return std::nullopt;
  }
  return v->get<std::string>();
}

const nlohmann::json* JsonReader::array(const json& obj, std::string_view key, const std::string& path,
                                        bool required) {
  const json* v = field(obj, key, path, required);
  if (!v) return nullptr;
  if (!v->is_array()) {
    fail(join(path, key), "expected an array");
    return nullptr;
  }
  return v;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("/", std::string("malformed JSON in ") + path + ": " + e.what());
  }
}

}  // namespace flowtwin
