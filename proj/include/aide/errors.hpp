#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aide {

// Base of every error the pipeline raises. Per-instance stage errors derive
// from this and get downgraded to passthrough fallbacks by the orchestrator;
// anything escaping an instance boundary is fatal for the run.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MalformedRecord : Error {
  MalformedRecord(std::size_t line_no, const std::string& cause)
      : Error("malformed record at line " + std::to_string(line_no) + ": " + cause),
        line(line_no) {}
  std::size_t line;
};

struct DuplicateId : Error {
  explicit DuplicateId(std::string instance_id)
      : Error("duplicate instance id: " + instance_id), id(std::move(instance_id)) {}
  std::string id;
};

struct SerializationFailure : Error {
  using Error::Error;
};

struct EmptyRegistry : Error {
  EmptyRegistry() : Error("tool registry is empty") {}
};

struct DuplicateToolName : Error {
  explicit DuplicateToolName(const std::string& name)
      : Error("tool already registered: " + name) {}
};

struct UnparseableReply : Error {
  using Error::Error;
};

struct EndpointFailure : Error {
  using Error::Error;
};

struct MissingImage : Error {
  explicit MissingImage(const std::string& instance_id)
      : Error("instance " + instance_id + " has no image but the tool requires one") {}
};

struct InvalidPayload : Error {
  InvalidPayload(std::string field_name, const std::string& cause)
      : Error("invalid expert payload, field '" + field_name + "': " + cause),
        field(std::move(field_name)) {}
  std::string field;
};

struct MissingFile : Error {
  explicit MissingFile(const std::string& path) : Error("file not found: " + path) {}
};

struct ValidationError : Error {
  ValidationError(std::string key_name, const std::string& cause)
      : Error("config key '" + key_name + "': " + cause), key(std::move(key_name)) {}
  std::string key;
};

struct ConfigHashMismatch : Error {
  using Error::Error;
};

struct CorruptState : Error {
  using Error::Error;
};

struct UnknownInstance : Error {
  explicit UnknownInstance(const std::string& id)
      : Error("decision references unknown instance id: " + id) {}
};

struct ScriptError : Error {
  using Error::Error;
};

}  // namespace aide
