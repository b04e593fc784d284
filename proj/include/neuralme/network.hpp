#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neuralme/errors.hpp"

namespace neuralme {

struct FluidProps {
  double density = 1060.0;           // kg/m^3
  double dynamic_viscosity = 4.0e-3; // Pa*s

  void validate() const;
};

struct SegmentGeometry {
  double length = 0.0;          // m
  double inlet_diameter = 0.0;  // m
  double outlet_diameter = 0.0; // m
  double wall_thickness = 0.0;  // m
  double elastic_modulus = 0.0; // Pa

  double mean_diameter() const { return 0.5 * (inlet_diameter + outlet_diameter); }
  void validate(const std::string& seg_id) const;
};

struct WindkesselParams {
  double r_proximal = 0.0;      // Pa*s/m^3
  double r_distal = 0.0;        // Pa*s/m^3
  double compliance = 0.0;      // m^3/Pa
  double venous_pressure = 0.0; // Pa

  void validate(const std::string& node) const;
};

enum class PlaceholderKind { C, LC };

/// Dynamic element inserted at an observed segment's end node. The correct
/// physics of this state is what the hybrid learns from data.
/// reference_pressure <= 0 requests the auto rule: the node's static
/// steady-state pressure at mean inflow, computed at model build.
struct PlaceholderParams {
  PlaceholderKind kind = PlaceholderKind::C;
  double capacitance = 1e-10;      // m^3/Pa
  double inertance = 2e6;          // Pa*s^2/m^3 (LC only)
  double reference_pressure = -1.0; // Pa

  void validate() const;
};

/// Per-network placeholder tuning loaded from the optional "placeholder"
/// block of a network file. Scalar defaults plus per-segment overrides.
struct PlaceholderConfig {
  double capacitance = 1e-10;
  double inertance = 2e6;
  double reference_pressure = -1.0;
  std::map<std::string, double> capacitance_per_segment;
  std::map<std::string, double> inertance_per_segment;

  PlaceholderParams for_segment(const std::string& seg_id,
                                PlaceholderKind kind) const;
};

struct Segment {
  std::string id;
  SegmentGeometry geometry;
  std::string from_node;
  std::string to_node;
};

/// Directed tree of pipe segments rooted at the heart inlet. Terminal
/// (vascular-bed) windkessels close the boundaries; observed segments mark
/// where placeholder states are inserted.
struct ArterialNetwork {
  std::vector<Segment> segments; // declaration order preserved
  std::map<std::string, WindkesselParams> terminals;
  std::vector<std::string> observed_segments;
  FluidProps fluid;
  PlaceholderConfig placeholder;

  // Derived by validate(): discovery-ordered node list (root first), the
  // root itself, and per-node adjacency as segment indices.
  std::vector<std::string> nodes;
  std::string root;
  std::map<std::string, std::vector<int>> outgoing; // node -> segment idx
  std::map<std::string, int> incoming;              // node -> segment idx

  int node_index(const std::string& name) const;
  bool is_leaf(const std::string& node) const;
  const Segment& segment(const std::string& id) const;

  /// Terminal nodes in a stable order (discovery order through the tree).
  std::vector<std::string> terminal_nodes() const;

  /// Checks the tree structure, terminal coverage and the observed-segment
  /// list; fills the derived members. Throws ValidationError naming the
  /// violated invariant.
  void validate();
};

struct HeartProfile {
  double heart_rate = 73.0;        // beats/min
  double stroke_volume = 7e-5;     // m^3
  double systolic_fraction = 0.3;  // of the period

  double period() const { return 60.0 / heart_rate; }
  void validate() const;
};

/// Parses and validates a network file (JSON, schema_version 1).
ArterialNetwork load_network(const std::filesystem::path& path);

/// Parses a network from a JSON string; `origin` labels error messages.
ArterialNetwork parse_network(const std::string& text, const std::string& origin);

} // namespace neuralme
