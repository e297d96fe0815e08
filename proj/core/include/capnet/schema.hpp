#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace capnet::schema {

/// Validates a JSON document against a JSON-Schema subset: type (incl. type lists),
/// properties, required, additionalProperties (bool), items, enum, const, minimum,
/// maximum, exclusiveMinimum, exclusiveMaximum, minItems, maxItems, minLength.
/// Returns one message per violation; empty when valid.
std::vector<std::string> validate(const std::string& document, const std::string& schema);

std::filesystem::path schema_dir();
/// Contents of a bundled schema file, e.g. "report.schema.json".
std::string load_schema(const std::string& name);

}  // namespace capnet::schema
