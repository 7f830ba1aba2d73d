// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "datapallet/errors.hpp"
#include "datapallet/fsutil.hpp"
#include "datapallet/pallet_id.hpp"

namespace datapallet {

using json = nlohmann::json;

enum class PalletKind { application, input_deck, data_pallet };

inline std::string to_string(PalletKind k) {
  switch (k) {
    case PalletKind::application: return "application";
    case PalletKind::input_deck: return "input_deck";
    case PalletKind::data_pallet: return "data_pallet";
  }
  throw ValidationError("unknown pallet kind value");
}

inline PalletKind pallet_kind_from_string(std::string_view s) {
  if (s == "application") return PalletKind::application;
  if (s == "input_deck") return PalletKind::input_deck;
  if (s == "data_pallet") return PalletKind::data_pallet;
  throw ValidationError("unknown pallet kind: \"" + std::string(s) + "\"");
}

// Recorded when a downstream node re-publishes an upstream pallet's data
// under a new id: the context it was re-published from.
struct ExtendedContext {
  PalletId application_id;
  PalletId input_deck_id;
  std::string node_name;

  friend bool operator==(const ExtendedContext&, const ExtendedContext&) = default;
};

// The provenance record stored in every pallet's annotations partition.
// For a data pallet it names exactly the pallets that produced the data:
// the application, the input deck, and any input pallets consumed.
struct ProvenanceAnnotation {
  uint32_t schema_version = 1;
  PalletKind kind = PalletKind::data_pallet;
  std::optional<PalletId> application_id;
  std::optional<PalletId> input_deck_id;
  std::vector<PalletId> input_pallet_ids;
  std::string command;  // expanded argv of the producing node; empty otherwise
  std::string node_name;
  std::optional<std::string> created_at;  // RFC 3339 UTC; absent in
                                          // deterministic mode
  std::vector<ExtendedContext> extended_contexts;
  json extras = json::object();  // unknown keys, preserved verbatim on re-encode

  friend bool operator==(const ProvenanceAnnotation&,
                         const ProvenanceAnnotation&) = default;

  void validate() const {
    if (schema_version != 1)
      throw ValidationError("unsupported annotation schema_version " +
                            std::to_string(schema_version));
    if (kind == PalletKind::data_pallet) {
      if (!application_id.has_value())
        throw ValidationError(
            "data_pallet annotation requires application_id");
      if (!input_deck_id.has_value())
        throw ValidationError("data_pallet annotation requires input_deck_id");
    } else {
      if (application_id.has_value() || input_deck_id.has_value())
        throw ValidationError(to_string(kind) +
                              " annotation must not carry application_id or "
                              "input_deck_id");
      if (!input_pallet_ids.empty())
        throw ValidationError(to_string(kind) +
                              " annotation must have empty input_pallet_ids");
    }
    for (size_t i = 0; i < input_pallet_ids.size(); ++i)
      for (size_t j = i + 1; j < input_pallet_ids.size(); ++j)
        if (input_pallet_ids[i] == input_pallet_ids[j])
          throw ValidationError("duplicate id in input_pallet_ids: " +
                                input_pallet_ids[i].hex());
    if (created_at.has_value() && !is_rfc3339_utc(*created_at))
      throw ValidationError("created_at is not an RFC 3339 UTC timestamp: \"" +
                            *created_at + "\"");
    if (!extras.is_object())
      throw ValidationError("annotation extras must be a JSON object");
  }

  // Count of direct antecedent ids named by this annotation.
  size_t antecedent_count() const {
    return (application_id ? 1u : 0u) + (input_deck_id ? 1u : 0u) +
           input_pallet_ids.size();
  }
};

namespace detail {

inline const char* const kKnownAnnotationKeys[] = {
    "schema_version", "kind",       "application_id",
    "input_deck_id",  "input_pallet_ids", "command",
    "node_name",      "created_at", "extended_contexts"};

inline bool is_known_annotation_key(const std::string& k) {
  for (const char* known : kKnownAnnotationKeys)
    if (k == known) return true;
  return false;
}

}  // namespace detail

// Canonical encoding: UTF-8, object keys sorted bytewise, no insignificant
// whitespace, absent optionals and empty lists omitted. Injective on valid
// annotations, so semantically equal values share one byte representation.
inline std::string encode(const ProvenanceAnnotation& a) {
  a.validate();
  json j = json::object();  // nlohmann objects iterate key-sorted
  j["schema_version"] = a.schema_version;
  j["kind"] = to_string(a.kind);
  j["node_name"] = a.node_name;
  if (a.application_id) j["application_id"] = a.application_id->hex();
  if (a.input_deck_id) j["input_deck_id"] = a.input_deck_id->hex();
  if (!a.input_pallet_ids.empty()) {
    json arr = json::array();
    for (const PalletId& id : a.input_pallet_ids) arr.push_back(id.hex());
    j["input_pallet_ids"] = std::move(arr);
  }
  if (!a.command.empty()) j["command"] = a.command;
  if (a.created_at) j["created_at"] = *a.created_at;
  if (!a.extended_contexts.empty()) {
    json arr = json::array();
    for (const ExtendedContext& c : a.extended_contexts) {
      json ctx = json::object();
      ctx["application_id"] = c.application_id.hex();
      ctx["input_deck_id"] = c.input_deck_id.hex();
      ctx["node_name"] = c.node_name;
      arr.push_back(std::move(ctx));
    }
    j["extended_contexts"] = std::move(arr);
  }
  for (const auto& [key, value] : a.extras.items()) {
    if (detail::is_known_annotation_key(key))
      throw ValidationError("extras key collides with schema key: " + key);
    j[key] = value;
  }
  return j.dump();
}

// Accepts any semantically valid JSON form (key order and whitespace do not
// matter); canonical form is restored on the next encode. Unknown keys are
// kept verbatim in extras.
inline ProvenanceAnnotation decode_annotation(std::string_view bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("annotation is not valid JSON: ") +
                          e.what());
  }
  if (!j.is_object())
    throw ValidationError("annotation must be a JSON object");

  auto require_string = [&](const json& v, std::string_view key) -> std::string {
    if (!v.is_string())
      throw ValidationError("annotation field " + std::string(key) +
                            " must be a string");
    return v.get<std::string>();
  };

  ProvenanceAnnotation a;
  a.extras = json::object();
  if (!j.contains("schema_version") ||
      !j["schema_version"].is_number_unsigned())
    throw ValidationError("annotation missing numeric schema_version");
  a.schema_version = j["schema_version"].get<uint32_t>();
  if (a.schema_version != 1)
    throw ValidationError("unsupported annotation schema_version " +
                          std::to_string(a.schema_version));
  if (!j.contains("kind"))
    throw ValidationError("annotation missing kind");
  a.kind = pallet_kind_from_string(require_string(j["kind"], "kind"));
  if (!j.contains("node_name"))
    throw ValidationError("annotation missing node_name");
  a.node_name = require_string(j["node_name"], "node_name");

  for (const auto& [key, value] : j.items()) {
    if (key == "schema_version" || key == "kind" || key == "node_name")
      continue;
    if (key == "application_id") {
      a.application_id = PalletId::from_hex(require_string(value, key));
    } else if (key == "input_deck_id") {
      a.input_deck_id = PalletId::from_hex(require_string(value, key));
    } else if (key == "input_pallet_ids") {
      if (!value.is_array())
        throw ValidationError("input_pallet_ids must be an array");
      for (const json& v : value)
        a.input_pallet_ids.push_back(
            PalletId::from_hex(require_string(v, "input_pallet_ids[]")));
    } else if (key == "command") {
      a.command = require_string(value, key);
    } else if (key == "created_at") {
      a.created_at = require_string(value, key);
    } else if (key == "extended_contexts") {
      if (!value.is_array())
        throw ValidationError("extended_contexts must be an array");
      for (const json& v : value) {
        if (!v.is_object() || !v.contains("application_id") ||
            !v.contains("input_deck_id") || !v.contains("node_name"))
          throw ValidationError(
              "extended_contexts entries need application_id, input_deck_id "
              "and node_name");
        ExtendedContext c;
        c.application_id =
            PalletId::from_hex(require_string(v["application_id"], "application_id"));
        c.input_deck_id =
            PalletId::from_hex(require_string(v["input_deck_id"], "input_deck_id"));
        c.node_name = require_string(v["node_name"], "node_name");
        a.extended_contexts.push_back(std::move(c));
      }
    } else {
      a.extras[key] = value;
    }
  }
  a.validate();
  return a;
}

// Returns a copy with the new context appended; the input is untouched.
inline ProvenanceAnnotation extend(const ProvenanceAnnotation& a,
                                   const ExtendedContext& new_context) {
  if (a.kind != PalletKind::data_pallet)
    throw ValidationError("only data_pallet annotations can be extended, not " +
                          to_string(a.kind));
  ProvenanceAnnotation out = a;
  out.extended_contexts.push_back(new_context);
  return out;
}

// Hub index row derived from an annotation plus the pallet's id.
struct AnnotationSummary {
  PalletId id;
  PalletKind kind = PalletKind::data_pallet;
  std::string node_name;
  size_t antecedent_count = 0;
};

inline AnnotationSummary summarize(const PalletId& id,
                                   const ProvenanceAnnotation& a) {
  return AnnotationSummary{id, a.kind, a.node_name, a.antecedent_count()};
}

}  // namespace datapallet
