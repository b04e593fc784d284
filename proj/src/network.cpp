#include "neuralme/network.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace neuralme {

using nlohmann::json;

void FluidProps::validate() const {
  if (density <= 0.0 || dynamic_viscosity <= 0.0)
    throw ValidationError("fluid: density and viscosity must be positive");
}

void SegmentGeometry::validate(const std::string& seg_id) const {
  if (length <= 0.0 || inlet_diameter <= 0.0 || outlet_diameter <= 0.0 ||
      wall_thickness <= 0.0 || elastic_modulus <= 0.0)
    throw ValidationError("segment '" + seg_id +
                          "': all geometry fields must be positive");
}

void WindkesselParams::validate(const std::string& node) const {
  if (r_proximal <= 0.0 || r_distal <= 0.0 || compliance <= 0.0)
    throw ValidationError("terminal '" + node +
                          "': r_proximal, r_distal, compliance must be positive");
}

void PlaceholderParams::validate() const {
  if (capacitance <= 0.0)
    throw ValidationError("placeholder: capacitance must be positive");
  if (kind == PlaceholderKind::LC && inertance <= 0.0)
    throw ValidationError("placeholder: inertance must be positive for LC");
}

PlaceholderParams PlaceholderConfig::for_segment(const std::string& seg_id,
                                                 PlaceholderKind kind) const {
  PlaceholderParams p;
  p.kind = kind;
  p.capacitance = capacitance;
  p.inertance = inertance;
  p.reference_pressure = reference_pressure;
  if (auto it = capacitance_per_segment.find(seg_id);
      it != capacitance_per_segment.end())
    p.capacitance = it->second;
  if (auto it = inertance_per_segment.find(seg_id);
      it != inertance_per_segment.end())
    p.inertance = it->second;
  p.validate();
  return p;
}

void HeartProfile::validate() const {
  if (heart_rate <= 0.0 || stroke_volume <= 0.0)
    throw ValidationError("heart: heart_rate and stroke_volume must be positive");
  if (systolic_fraction <= 0.0 || systolic_fraction >= 1.0)
    throw ValidationError("heart: systolic_fraction must lie in (0,1)");
}

int ArterialNetwork::node_index(const std::string& name) const {
  auto it = std::find(nodes.begin(), nodes.end(), name);
  if (it == nodes.end())
    throw ValidationError("unknown node '" + name + "'");
  return static_cast<int>(it - nodes.begin());
}

bool ArterialNetwork::is_leaf(const std::string& node) const {
  auto it = outgoing.find(node);
  return it == outgoing.end() || it->second.empty();
}

const Segment& ArterialNetwork::segment(const std::string& id) const {
  for (const auto& s : segments)
    if (s.id == id) return s;
  throw ValidationError("unknown segment '" + id + "'");
}

std::vector<std::string> ArterialNetwork::terminal_nodes() const {
  std::vector<std::string> out;
  for (const auto& n : nodes)
    if (terminals.count(n)) out.push_back(n);
  return out;
}

void ArterialNetwork::validate() {
  fluid.validate();
  if (segments.empty()) throw ValidationError("network has no segments");

  std::set<std::string> seg_ids;
  for (const auto& s : segments) {
    s.geometry.validate(s.id);
    if (s.from_node == s.to_node)
      throw ValidationError("segment '" + s.id + "' is a self-loop");
    if (!seg_ids.insert(s.id).second)
      throw ValidationError("duplicate segment id '" + s.id + "'");
  }

  outgoing.clear();
  incoming.clear();
  for (int i = 0; i < static_cast<int>(segments.size()); ++i) {
    const auto& s = segments[i];
    outgoing[s.from_node].push_back(i);
    if (!incoming.emplace(s.to_node, i).second)
      throw ValidationError("node '" + s.to_node +
                            "' has two parents (cycle or merge detected)");
  }

  // Exactly one root: a from_node that never appears as a to_node.
  std::set<std::string> all_nodes;
  for (const auto& s : segments) {
    all_nodes.insert(s.from_node);
    all_nodes.insert(s.to_node);
  }
  std::vector<std::string> roots;
  for (const auto& n : all_nodes)
    if (!incoming.count(n)) roots.push_back(n);
  if (roots.size() != 1)
    throw ValidationError("network must have exactly one root (heart inlet), found " +
                          std::to_string(roots.size()));
  root = roots[0];

  // Discovery order from the root; also proves connectivity (a disconnected
  // part would contain its own root and trip the check above, except for
  // cyclic islands which are unreachable).
  nodes.clear();
  std::deque<std::string> queue{root};
  std::set<std::string> seen{root};
  while (!queue.empty()) {
    std::string n = queue.front();
    queue.pop_front();
    nodes.push_back(n);
    if (auto it = outgoing.find(n); it != outgoing.end())
      for (int si : it->second) {
        const auto& child = segments[si].to_node;
        if (seen.insert(child).second) queue.push_back(child);
      }
  }
  if (nodes.size() != all_nodes.size())
    throw ValidationError("cycle detected: " +
                          std::to_string(all_nodes.size() - nodes.size()) +
                          " node(s) unreachable from the root");

  for (const auto& [node, wk] : terminals) {
    if (!all_nodes.count(node))
      throw ValidationError("terminal attached to unknown node '" + node + "'");
    wk.validate(node);
  }
  for (const auto& n : nodes)
    if (is_leaf(n) && !terminals.count(n))
      throw ValidationError("leaf node '" + n + "' has no windkessel terminal");

  std::set<std::string> obs_seen;
  for (const auto& id : observed_segments) {
    if (!seg_ids.count(id))
      throw ValidationError("observed segment '" + id + "' does not exist");
    if (!obs_seen.insert(id).second)
      throw ValidationError("observed segment '" + id + "' listed twice");
  }
}

namespace {

double require_number(const json& j, const std::string& key,
                      const std::string& ctx) {
  if (!j.contains(key) || !j[key].is_number())
    throw ParseError(ctx + ": missing or non-numeric field '" + key + "'");
  return j[key].get<double>();
}

std::string require_string(const json& j, const std::string& key,
                           const std::string& ctx) {
  if (!j.contains(key) || !j[key].is_string())
    throw ParseError(ctx + ": missing or non-string field '" + key + "'");
  return j[key].get<std::string>();
}

} // namespace

ArterialNetwork parse_network(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(origin + ": " + e.what());
  }

  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw ParseError(origin + ": missing integer 'schema_version'");
  if (j["schema_version"].get<int>() != 1)
    throw ParseError(origin + ": unsupported schema_version " +
                     j["schema_version"].dump());

  ArterialNetwork net;
  if (j.contains("fluid")) {
    net.fluid.density = require_number(j["fluid"], "density", origin + " fluid");
    net.fluid.dynamic_viscosity =
        require_number(j["fluid"], "dynamic_viscosity", origin + " fluid");
  }

  if (!j.contains("segments") || !j["segments"].is_array())
    throw ParseError(origin + ": missing 'segments' array");
  for (const auto& js : j["segments"]) {
    Segment s;
    s.id = require_string(js, "id", origin + " segment");
    const std::string ctx = origin + " segment '" + s.id + "'";
    s.from_node = require_string(js, "from", ctx);
    s.to_node = require_string(js, "to", ctx);
    s.geometry.length = require_number(js, "length", ctx);
    s.geometry.inlet_diameter = require_number(js, "inlet_diameter", ctx);
    s.geometry.outlet_diameter = require_number(js, "outlet_diameter", ctx);
    s.geometry.wall_thickness = require_number(js, "wall_thickness", ctx);
    s.geometry.elastic_modulus = require_number(js, "elastic_modulus", ctx);
    net.segments.push_back(std::move(s));
  }

  if (!j.contains("terminals") || !j["terminals"].is_object())
    throw ParseError(origin + ": missing 'terminals' object");
  for (const auto& [node, jt] : j["terminals"].items()) {
    const std::string ctx = origin + " terminal '" + node + "'";
    WindkesselParams wk;
    wk.r_proximal = require_number(jt, "r_proximal", ctx);
    wk.r_distal = require_number(jt, "r_distal", ctx);
    wk.compliance = require_number(jt, "compliance", ctx);
    wk.venous_pressure = require_number(jt, "venous_pressure", ctx);
    net.terminals.emplace(node, wk);
  }

  if (j.contains("observed")) {
    if (!j["observed"].is_array())
      throw ParseError(origin + ": 'observed' must be an array");
    for (const auto& jo : j["observed"]) {
      if (!jo.is_string())
        throw ParseError(origin + ": 'observed' entries must be segment ids");
      net.observed_segments.push_back(jo.get<std::string>());
    }
  }

  if (j.contains("placeholder")) {
    const auto& jp = j["placeholder"];
    auto read = [&](const char* key, double& scalar,
                    std::map<std::string, double>& per_seg) {
      if (!jp.contains(key)) return;
      if (jp[key].is_number()) {
        scalar = jp[key].get<double>();
      } else if (jp[key].is_object()) {
        for (const auto& [seg, v] : jp[key].items())
          per_seg[seg] = v.get<double>();
      } else {
        throw ParseError(origin + ": placeholder '" + key +
                         "' must be a number or per-segment object");
      }
    };
    read("capacitance", net.placeholder.capacitance,
         net.placeholder.capacitance_per_segment);
    read("inertance", net.placeholder.inertance,
         net.placeholder.inertance_per_segment);
    if (jp.contains("reference_pressure"))
      net.placeholder.reference_pressure = jp["reference_pressure"].get<double>();
  }

  net.validate();
  return net;
}

ArterialNetwork load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw ParseError("cannot open network file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_network(ss.str(), path.filename().string());
}

} // namespace neuralme
