#include "capnet/schema.hpp"

#include <cstdlib>

#include <json.hpp>

#include "capnet/error.hpp"
#include "capnet/frame_io.hpp"

namespace capnet::schema {

using json = nlohmann::json;

namespace {

bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "integer") return v.is_number_integer() || (v.is_number_float() && v.get<double>() == static_cast<long long>(v.get<double>()));
  if (t == "number") return v.is_number();
  throw FormatError("schema: unknown type '" + t + "'");
}

void check(const json& v, const json& s, const std::string& at, std::vector<std::string>& errors) {
  if (!s.is_object()) throw FormatError("schema: subschema at " + at + " is not an object");

  if (s.contains("type")) {
    const json& t = s["type"];
    bool ok = false;
    if (t.is_string()) {
      ok = has_type(v, t.get<std::string>());
    } else {
      for (const auto& x : t) ok = ok || has_type(v, x.get<std::string>());
    }
    if (!ok) {
      errors.push_back(at + ": expected type " + t.dump());
      return;
    }
  }
  if (s.contains("enum")) {
    bool ok = false;
    for (const auto& e : s["enum"]) ok = ok || e == v;
    if (!ok) errors.push_back(at + ": value not in enum");
  }
  if (s.contains("const") && s["const"] != v) errors.push_back(at + ": expected " + s["const"].dump());

  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s["minimum"].get<double>()) errors.push_back(at + ": below minimum");
    if (s.contains("maximum") && x > s["maximum"].get<double>()) errors.push_back(at + ": above maximum");
    if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>()) errors.push_back(at + ": not above exclusiveMinimum");
    if (s.contains("exclusiveMaximum") && x >= s["exclusiveMaximum"].get<double>()) errors.push_back(at + ": not below exclusiveMaximum");
  }
  if (v.is_string() && s.contains("minLength") && v.get<std::string>().size() < s["minLength"].get<std::size_t>()) {
    errors.push_back(at + ": string too short");
  }
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) errors.push_back(at + ": too few items");
    if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) errors.push_back(at + ": too many items");
    if (s.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s["items"], at + "[" + std::to_string(i) + "]", errors);
    }
  }
  if (v.is_object()) {
    if (s.contains("required")) {
      for (const auto& k : s["required"]) {
        if (!v.contains(k.get<std::string>())) errors.push_back(at + ": missing required '" + k.get<std::string>() + "'");
      }
    }
    const json props = s.value("properties", json::object());
    for (const auto& [k, x] : v.items()) {
      if (props.contains(k)) {
        check(x, props[k], at + "." + k, errors);
      } else if (s.contains("additionalProperties")) {
        const json& ap = s["additionalProperties"];
        if (ap.is_boolean() && !ap.get<bool>()) errors.push_back(at + ": unexpected property '" + k + "'");
        if (ap.is_object()) check(x, ap, at + "." + k, errors);
      }
    }
  }
}

}  // namespace

std::vector<std::string> validate(const std::string& document, const std::string& schema) {
  json doc, sch;
  try {
    sch = json::parse(schema);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("schema: ") + e.what());
  }
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    return {std::string("document is not JSON: ") + e.what()};
  }
  std::vector<std::string> errors;
  check(doc, sch, "$", errors);
  return errors;
}

std::filesystem::path schema_dir() {
  if (const char* env = std::getenv("CAPNET_SCHEMA_DIR")) return env;
  return CAPNET_SCHEMA_DIR;
}

std::string load_schema(const std::string& name) { return io::read_file(schema_dir() / name); }

}  // namespace capnet::schema
