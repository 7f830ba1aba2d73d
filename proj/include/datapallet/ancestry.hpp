// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "datapallet/annotation.hpp"
#include "datapallet/errors.hpp"
#include "datapallet/hub.hpp"
#include "datapallet/pallet_id.hpp"

namespace datapallet {

// Why an edge exists: the annotation field of the child pallet that names
// the parent.
enum class LinkKind {
  application,
  input_deck,
  input_pallet,
  extended_context,
};

inline std::string to_string(LinkKind k) {
  switch (k) {
    case LinkKind::application: return "application";
    case LinkKind::input_deck: return "input_deck";
    case LinkKind::input_pallet: return "input_pallet";
    case LinkKind::extended_context: return "extended_context";
  }
  return "unknown";
}

struct AncestryNode {
  PalletId id;
  std::optional<PalletKind> kind;  // absent when the pallet is unresolved
  std::string node_name;
  bool resolved = false;
};

// Directed edge child -> antecedent.
struct AncestryEdge {
  PalletId from;
  PalletId to;
  LinkKind kind = LinkKind::input_pallet;

  friend bool operator==(const AncestryEdge&, const AncestryEdge&) = default;
  friend auto operator<=>(const AncestryEdge& a, const AncestryEdge& b) {
    if (auto c = a.from <=> b.from; c != 0) return c;
    if (auto c = a.to <=> b.to; c != 0) return c;
    return static_cast<int>(a.kind) <=> static_cast<int>(b.kind);
  }
};

struct AncestryGraph {
  PalletId root;
  std::map<PalletId, AncestryNode> nodes;
  std::set<AncestryEdge> edges;
};

namespace detail {

// Antecedent links named by one annotation, in field order.
inline std::vector<std::pair<PalletId, LinkKind>> annotation_links(
    const ProvenanceAnnotation& a) {
  std::vector<std::pair<PalletId, LinkKind>> out;
  if (a.application_id) out.emplace_back(*a.application_id, LinkKind::application);
  if (a.input_deck_id) out.emplace_back(*a.input_deck_id, LinkKind::input_deck);
  for (const PalletId& id : a.input_pallet_ids)
    out.emplace_back(id, LinkKind::input_pallet);
  for (const ExtendedContext& ctx : a.extended_contexts) {
    out.emplace_back(ctx.application_id, LinkKind::extended_context);
    out.emplace_back(ctx.input_deck_id, LinkKind::extended_context);
  }
  return out;
}

}  // namespace detail

// Walks the annotation links breadth-first from root_id until every branch
// bottoms out in an application or input deck (or leaves the hub: ids the
// hub cannot resolve become unresolved leaf nodes, never errors — pallets
// remain traceable even when parts of the lineage were deleted).
//
// max_depth limits the walk: 0 means just the root, 1 adds its direct
// antecedents, and so on. Negative means unlimited.
inline AncestryGraph ancestors(const Hub& hub, const PalletId& root_id,
                               int max_depth = -1) {
  if (!hub.contains(root_id))
    throw NotFoundError("pallet not in hub: " + root_id.hex());

  AncestryGraph g;
  g.root = root_id;
  std::deque<std::pair<PalletId, int>> frontier;  // id, depth
  frontier.emplace_back(root_id, 0);

  while (!frontier.empty()) {
    auto [id, depth] = frontier.front();
    frontier.pop_front();
    if (g.nodes.count(id) > 0) continue;

    AncestryNode node;
    node.id = id;
    if (!hub.contains(id)) {
      g.nodes[id] = node;  // unresolved leaf
      continue;
    }
    ProvenanceAnnotation a = hub.get(id).annotation();
    node.kind = a.kind;
    node.node_name = a.node_name;
    node.resolved = true;
    g.nodes[id] = node;

    if (max_depth >= 0 && depth >= max_depth) continue;
    for (const auto& [parent, link] : detail::annotation_links(a)) {
      g.edges.insert({id, parent, link});
      frontier.emplace_back(parent, depth + 1);
    }
  }
  return g;
}

// Everything in the hub that (transitively) links back to target_id. This is
// a full scan: annotations only point backwards, so forward lookup has to
// read every stored pallet once and then walk the reversed links.
inline AncestryGraph dependents(const Hub& hub, const PalletId& target_id) {
  if (!hub.contains(target_id))
    throw NotFoundError("pallet not in hub: " + target_id.hex());

  // Reverse index over the whole hub.
  std::map<PalletId, std::vector<AncestryEdge>> incoming;  // parent -> edges
  std::map<PalletId, AncestryNode> known;
  for (const HubEntry& entry : hub.list()) {
    ProvenanceAnnotation a = hub.get(entry.id).annotation();
    AncestryNode node;
    node.id = entry.id;
    node.kind = a.kind;
    node.node_name = a.node_name;
    node.resolved = true;
    known[entry.id] = node;
    for (const auto& [parent, link] : detail::annotation_links(a))
      incoming[parent].push_back({entry.id, parent, link});
  }

  AncestryGraph g;
  g.root = target_id;
  std::deque<PalletId> frontier{target_id};
  while (!frontier.empty()) {
    PalletId id = frontier.front();
    frontier.pop_front();
    if (g.nodes.count(id) > 0) continue;
    g.nodes[id] = known.at(id);  // scan covered the whole hub
    auto it = incoming.find(id);
    if (it == incoming.end()) continue;
    for (const AncestryEdge& e : it->second) {
      g.edges.insert(e);
      frontier.push_back(e.from);
    }
  }
  return g;
}

// Deterministic Graphviz rendering: nodes then edges, each sorted, one per
// line. Labels show the pallet kind and a 12-character id prefix.
inline std::string render_dot(const AncestryGraph& g) {
  std::string out = "digraph ancestry {\n";
  out += "  rankdir=BT;\n";
  for (const auto& [id, node] : g.nodes) {
    std::string label =
        node.kind ? to_string(*node.kind) : std::string("unresolved");
    if (!node.node_name.empty()) label += " " + node.node_name;
    label += "\\n" + id.prefix(12);
    out += "  \"" + id.hex() + "\" [label=\"" + label + "\"";
    if (id == g.root) out += ", penwidth=2";
    if (!node.resolved) out += ", style=dashed";
    out += "];\n";
  }
  for (const AncestryEdge& e : g.edges) {
    out += "  \"" + e.from.hex() + "\" -> \"" + e.to.hex() + "\" [label=\"" +
           to_string(e.kind) + "\"];\n";
  }
  out += "}\n";
  return out;
}

inline json graph_to_json(const AncestryGraph& g) {
  json nodes = json::array();
  for (const auto& [id, node] : g.nodes) {
    json n = json::object();
    n["id"] = id.hex();
    if (node.kind) n["kind"] = to_string(*node.kind);
    if (!node.node_name.empty()) n["node_name"] = node.node_name;
    n["resolved"] = node.resolved;
    nodes.push_back(n);
  }
  json edges = json::array();
  for (const AncestryEdge& e : g.edges) {
    json row = json::object();
    row["from"] = e.from.hex();
    row["to"] = e.to.hex();
    row["kind"] = to_string(e.kind);
    edges.push_back(row);
  }
  json j = json::object();
  j["root"] = g.root.hex();
  j["nodes"] = nodes;
  j["edges"] = edges;
  return j;
}

// Content addressing makes a true ancestry cycle unconstructible (a pallet
// cannot name its own hash before it exists), so any cycle found here means
// hand-forged annotations. Returns the ids along one cycle, or empty.
inline std::vector<PalletId> find_cycle(const AncestryGraph& g) {
  std::map<PalletId, std::vector<PalletId>> adj;
  for (const AncestryEdge& e : g.edges) adj[e.from].push_back(e.to);

  enum class Mark { unvisited, in_progress, done };
  std::map<PalletId, Mark> marks;
  std::vector<PalletId> stack;
  std::vector<PalletId> cycle;

  // Iterative DFS with explicit phase so the path stack stays accurate.
  struct Frame {
    PalletId id;
    size_t next = 0;
  };
  for (const auto& [start, node] : g.nodes) {
    if (marks.count(start) > 0 && marks[start] != Mark::unvisited) continue;
    std::vector<Frame> frames{{start, 0}};
    marks[start] = Mark::in_progress;
    stack.push_back(start);
    while (!frames.empty() && cycle.empty()) {
      Frame& f = frames.back();
      auto it = adj.find(f.id);
      if (it == adj.end() || f.next >= it->second.size()) {
        marks[f.id] = Mark::done;
        stack.pop_back();
        frames.pop_back();
        continue;
      }
      PalletId next = it->second[f.next++];
      Mark m = marks.count(next) > 0 ? marks[next] : Mark::unvisited;
      if (m == Mark::in_progress) {
        auto at = std::find(stack.begin(), stack.end(), next);
        cycle.assign(at, stack.end());
        cycle.push_back(next);
      } else if (m == Mark::unvisited) {
        marks[next] = Mark::in_progress;
        stack.push_back(next);
        frames.push_back({next, 0});
      }
    }
    if (!cycle.empty()) break;
  }
  return cycle;
}

}  // namespace datapallet
