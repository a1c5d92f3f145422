#pragma once

// Expert tool registry and the uniform invocation path: build the wire
// request, call the endpoint (cached by image content), validate the
// structured payload against the output-kind schema.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "aide/cache.hpp"
#include "aide/corpus.hpp"
#include "aide/endpoint.hpp"
#include "aide/errors.hpp"
#include "aide/hash.hpp"

namespace aide {

enum class OutputKind { text_regions, grounded_objects };

inline const char* output_kind_name(OutputKind k) {
  return k == OutputKind::text_regions ? "text_regions" : "grounded_objects";
}

inline OutputKind output_kind_from_name(const std::string& name) {
  if (name == "text_regions") return OutputKind::text_regions;
  if (name == "grounded_objects") return OutputKind::grounded_objects;
  throw ValidationError("output_kind", "unknown value '" + name + "'");
}

struct ToolDescriptor {
  std::string name;
  std::string capability;  // fed verbatim to the selector prompt
  OutputKind output_kind = OutputKind::text_regions;
  bool requires_image = true;

  bool applicable_to(const Instance& inst) const {
    return !requires_image || inst.has_image();
  }
};

class ToolRegistry {
 public:
  void register_tool(ToolDescriptor descriptor) {
    if (descriptor.name.empty()) throw ValidationError("tool.name", "must be nonempty");
    if (descriptor.capability.empty())
      throw ValidationError("tool.capability", "must be nonempty");
    if (find(descriptor.name)) throw DuplicateToolName(descriptor.name);
    tools_.push_back(std::move(descriptor));
  }

  const ToolDescriptor* find(const std::string& name) const {
    for (const auto& t : tools_)
      if (t.name == name) return &t;
    return nullptr;
  }

  // Insertion order; selector prompts iterate this, so it must be stable.
  const std::vector<ToolDescriptor>& tools() const { return tools_; }
  bool empty() const { return tools_.empty(); }
  std::size_t size() const { return tools_.size(); }

  static ToolRegistry standard() {
    ToolRegistry r;
    r.register_tool({"ocr",
                     "Reads printed or handwritten text in the image and returns the text "
                     "regions with bounding boxes and confidences.",
                     OutputKind::text_regions, true});
    r.register_tool({"grounding",
                     "Locates objects mentioned in the text and returns labeled bounding "
                     "boxes, optionally with segmentation masks, and confidences.",
                     OutputKind::grounded_objects, true});
    return r;
  }

 private:
  std::vector<ToolDescriptor> tools_;
};

struct TextRegion {
  std::array<double, 4> bbox{};  // x1,y1,x2,y2 normalized to [0,1]
  std::string text;
  double confidence = 0.0;
  bool operator==(const TextRegion&) const = default;
};

struct GroundedObject {
  std::string label;
  std::array<double, 4> bbox{};
  double confidence = 0.0;
  std::optional<std::string> mask;  // run-length string, passed through untouched
  bool operator==(const GroundedObject&) const = default;
};

struct TextRegions {
  std::vector<TextRegion> regions;
  bool operator==(const TextRegions&) const = default;
};

struct GroundedObjects {
  std::vector<GroundedObject> objects;
  bool operator==(const GroundedObjects&) const = default;
};

struct ExpertOutput {
  std::string tool;
  std::variant<TextRegions, GroundedObjects> payload;

  OutputKind kind() const {
    return std::holds_alternative<TextRegions>(payload) ? OutputKind::text_regions
                                                        : OutputKind::grounded_objects;
  }
  bool found_nothing() const {
    if (const auto* tr = std::get_if<TextRegions>(&payload)) return tr->regions.empty();
    return std::get<GroundedObjects>(payload).objects.empty();
  }
};

namespace detail {

constexpr double kBoundTolerance = 1e-6;

inline double checked_confidence(const nlohmann::json& v, const std::string& field) {
  if (!v.is_number()) throw InvalidPayload(field, "not a number");
  double c = v.get<double>();
  if (!std::isfinite(c)) throw InvalidPayload(field, "not finite");
  // Values within 1e-6 of the bounds are clamped; anything further out is
  // rejected rather than silently fixed.
  if (c < 0.0) {
    if (c >= -kBoundTolerance) return 0.0;
    throw InvalidPayload(field, "confidence below 0");
  }
  if (c > 1.0) {
    if (c <= 1.0 + kBoundTolerance) return 1.0;
    throw InvalidPayload(field, "confidence above 1");
  }
  return c;
}

inline std::array<double, 4> checked_bbox(const nlohmann::json& v, const std::string& field) {
  if (!v.is_array() || v.size() != 4) throw InvalidPayload(field, "bbox must be 4 numbers");
  std::array<double, 4> bbox{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!v[i].is_number()) throw InvalidPayload(field, "bbox entry is not a number");
    bbox[i] = v[i].get<double>();
    if (!std::isfinite(bbox[i])) throw InvalidPayload(field, "bbox entry is not finite");
    if (bbox[i] < 0.0 || bbox[i] > 1.0)
      throw InvalidPayload(field, "bbox coordinates must lie in [0,1]");
  }
  if (bbox[0] > bbox[2]) throw InvalidPayload(field, "x1 > x2");
  if (bbox[1] > bbox[3]) throw InvalidPayload(field, "y1 > y2");
  return bbox;
}

}  // namespace detail

// Enforces every ExpertOutput invariant on a raw wire payload. Unknown keys
// from live services are tolerated; missing or ill-typed required fields are
// not. Empty region/object lists are valid ("nothing found").
inline ExpertOutput validate_expert_output(const std::string& tool, OutputKind kind,
                                           const nlohmann::json& raw) {
  if (!raw.is_object()) throw InvalidPayload("payload", "not a JSON object");
  ExpertOutput out;
  out.tool = tool;
  if (kind == OutputKind::text_regions) {
    if (!raw.contains("regions") || !raw["regions"].is_array())
      throw InvalidPayload("regions", "missing or not an array");
    TextRegions tr;
    std::size_t i = 0;
    for (const auto& r : raw["regions"]) {
      const std::string field = "regions[" + std::to_string(i++) + "]";
      if (!r.is_object()) throw InvalidPayload(field, "not an object");
      if (!r.contains("text") || !r["text"].is_string())
        throw InvalidPayload(field + ".text", "missing or not a string");
      if (!r.contains("bbox")) throw InvalidPayload(field + ".bbox", "missing");
      if (!r.contains("confidence")) throw InvalidPayload(field + ".confidence", "missing");
      TextRegion region;
      region.bbox = detail::checked_bbox(r["bbox"], field + ".bbox");
      region.text = r["text"].get<std::string>();
      region.confidence = detail::checked_confidence(r["confidence"], field + ".confidence");
      tr.regions.push_back(std::move(region));
    }
    out.payload = std::move(tr);
  } else {
    if (!raw.contains("objects") || !raw["objects"].is_array())
      throw InvalidPayload("objects", "missing or not an array");
    GroundedObjects go;
    std::size_t i = 0;
    for (const auto& o : raw["objects"]) {
      const std::string field = "objects[" + std::to_string(i++) + "]";
      if (!o.is_object()) throw InvalidPayload(field, "not an object");
      if (!o.contains("label") || !o["label"].is_string())
        throw InvalidPayload(field + ".label", "missing or not a string");
      if (!o.contains("bbox")) throw InvalidPayload(field + ".bbox", "missing");
      if (!o.contains("confidence")) throw InvalidPayload(field + ".confidence", "missing");
      GroundedObject obj;
      obj.label = o["label"].get<std::string>();
      obj.bbox = detail::checked_bbox(o["bbox"], field + ".bbox");
      obj.confidence = detail::checked_confidence(o["confidence"], field + ".confidence");
      if (o.contains("mask")) {
        if (!o["mask"].is_string()) throw InvalidPayload(field + ".mask", "not a string");
        obj.mask = o["mask"].get<std::string>();
      }
      go.objects.push_back(std::move(obj));
    }
    out.payload = std::move(go);
  }
  return out;
}

// Cache identity of an image reference: the file's content hash when it is a
// readable local file, otherwise the hash of the reference string itself
// (remote URIs, synthetic fixtures).
inline std::string image_content_hash(const std::string& image_ref) {
  std::error_code ec;
  if (std::filesystem::is_regular_file(image_ref, ec)) {
    try {
      return sha256_hex_file(image_ref);
    } catch (const Error&) {
      // fall through to the reference hash
    }
  }
  return sha256_hex("uri:" + image_ref);
}

// Expert wire contract: request {"image": <string>, "params": {}}.
inline std::string expert_request_body(const std::string& image_ref) {
  return nlohmann::json{{"image", image_ref}, {"params", nlohmann::json::object()}}.dump();
}

struct InvokeOptions {
  RetryPolicy retry;
  const ResponseCache* cache = nullptr;
};

inline ExpertOutput invoke_expert(const ToolDescriptor& tool, const Instance& instance,
                                  Endpoint& endpoint, const InvokeOptions& opts = {}) {
  if (tool.requires_image && !instance.has_image()) throw MissingImage(instance.id);
  const std::string image_ref = instance.image.value_or("");
  const std::string body = expert_request_body(image_ref);

  std::string response;
  const std::string cache_key =
      "expert:" + tool.name + ":" + image_content_hash(image_ref);
  if (opts.cache && opts.cache->enabled()) {
    if (auto hit = opts.cache->get(cache_key)) {
      response = *hit;
    } else {
      response = post_with_retries(endpoint, body, opts.retry);
      opts.cache->put(cache_key, response);
    }
  } else {
    response = post_with_retries(endpoint, body, opts.retry);
  }

  nlohmann::json payload = nlohmann::json::parse(response, nullptr, false);
  if (payload.is_discarded())
    throw InvalidPayload("payload", "response is not valid JSON");
  return validate_expert_output(tool.name, tool.output_kind, payload);
}

}  // namespace aide
