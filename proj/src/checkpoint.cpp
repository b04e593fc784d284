#include "neuralme/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace neuralme {

using nlohmann::json;

namespace {

json vec_to_json(const Vec& v) {
  json arr = json::array();
  for (long i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vec vec_from_json(const json& arr) {
  Vec v(arr.size());
  for (size_t i = 0; i < arr.size(); ++i) v[static_cast<long>(i)] = arr[i].get<double>();
  return v;
}

json scaler_to_json(const AffineScaler& s) {
  return {{"shift", vec_to_json(s.shift)},
          {"scale", vec_to_json(s.scale)},
          {"degenerate", s.degenerate}};
}

AffineScaler scaler_from_json(const json& j) {
  AffineScaler s;
  s.shift = vec_from_json(j.at("shift"));
  s.scale = vec_from_json(j.at("scale"));
  s.degenerate = j.at("degenerate").get<std::vector<std::uint8_t>>();
  return s;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  json j;
  j["format"] = "neuralme-checkpoint";
  j["version"] = 1;
  j["network_file"] = ck.network_file;
  j["network_hash"] = ck.network_hash;
  j["variant"] = to_string(ck.variant);
  j["fluid"] = {{"density", ck.fluid.density},
                {"dynamic_viscosity", ck.fluid.dynamic_viscosity}};
  j["heart"] = {{"heart_rate", ck.heart.heart_rate},
                {"stroke_volume", ck.heart.stroke_volume},
                {"systolic_fraction", ck.heart.systolic_fraction}};
  json phs = json::array();
  for (const auto& p : ck.placeholders)
    phs.push_back({{"kind", p.kind == PlaceholderKind::C ? "C" : "LC"},
                   {"capacitance", p.capacitance},
                   {"inertance", p.inertance},
                   {"reference_pressure", p.reference_pressure}});
  j["placeholders"] = phs;
  j["seed"] = ck.seed;
  j["residual_skip"] = ck.residual_skip;
  j["topology"] = {{"n_wk", ck.topology.n_wk},
                   {"n_obs", ck.topology.n_obs},
                   {"variant",
                    ck.topology.variant == PlaceholderKind::C ? "C" : "LC"},
                   {"hidden_width", ck.topology.hidden_width}};
  j["scalers"] = {{"state", scaler_to_json(ck.scalers.state)},
                  {"deriv", scaler_to_json(ck.scalers.deriv)}};
  j["params"] = vec_to_json(ck.params);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open checkpoint '" + path.string() + "' for writing");
  f << j.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open checkpoint '" + path.string() + "'");
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "neuralme-checkpoint")
    throw ParseError(path.string() + ": not a checkpoint file");

  Checkpoint ck;
  ck.network_file = j.at("network_file").get<std::string>();
  ck.network_hash = j.at("network_hash").get<std::string>();
  ck.variant = cardio_variant_from_string(j.at("variant").get<std::string>());
  ck.fluid.density = j.at("fluid").at("density").get<double>();
  ck.fluid.dynamic_viscosity = j.at("fluid").at("dynamic_viscosity").get<double>();
  ck.heart.heart_rate = j.at("heart").at("heart_rate").get<double>();
  ck.heart.stroke_volume = j.at("heart").at("stroke_volume").get<double>();
  ck.heart.systolic_fraction = j.at("heart").at("systolic_fraction").get<double>();
  for (const auto& jp : j.at("placeholders")) {
    PlaceholderParams p;
    p.kind = jp.at("kind").get<std::string>() == "LC" ? PlaceholderKind::LC
                                                      : PlaceholderKind::C;
    p.capacitance = jp.at("capacitance").get<double>();
    p.inertance = jp.at("inertance").get<double>();
    p.reference_pressure = jp.at("reference_pressure").get<double>();
    ck.placeholders.push_back(p);
  }
  ck.seed = j.at("seed").get<std::uint64_t>();
  ck.residual_skip = j.at("residual_skip").get<bool>();
  ck.topology.n_wk = j.at("topology").at("n_wk").get<int>();
  ck.topology.n_obs = j.at("topology").at("n_obs").get<int>();
  ck.topology.variant =
      j.at("topology").at("variant").get<std::string>() == "LC"
          ? PlaceholderKind::LC
          : PlaceholderKind::C;
  ck.topology.hidden_width = j.at("topology").at("hidden_width").get<int>();
  ck.scalers.state = scaler_from_json(j.at("scalers").at("state"));
  ck.scalers.deriv = scaler_from_json(j.at("scalers").at("deriv"));
  ck.params = vec_from_json(j.at("params"));
  return ck;
}

Checkpoint make_checkpoint(const HybridModel& model, const CardioModel& inner,
                           const std::string& network_file,
                           const std::string& network_hash,
                           std::uint64_t seed) {
  Checkpoint ck;
  ck.network_file = network_file;
  ck.network_hash = network_hash;
  ck.variant = inner.variant();
  ck.fluid = inner.fluid();
  ck.heart = inner.heart();
  ck.placeholders = inner.placeholder_params();
  ck.seed = seed;
  ck.residual_skip = model.residual_skip;
  ck.topology = model.topology();
  ck.scalers = model.scalers();
  ck.params = model.params().flat;
  return ck;
}

HybridModel rebuild_hybrid(const Checkpoint& ck, const ArterialNetwork& net) {
  auto inner = build_model(net, ck.variant, ck.fluid, ck.heart,
                           ck.variant == CardioVariant::reference_elastic
                               ? std::nullopt
                               : std::make_optional(ck.placeholders));
  ParameterVector params;
  params.n_art = ck.topology.n_art();
  params.hidden = ck.topology.hidden_width;
  if (ck.params.size() != params.size())
    throw ValidationError("checkpoint parameter count does not match topology");
  params.flat = ck.params;
  HybridModel m(ck.topology, std::move(params), ck.scalers, std::move(inner));
  m.residual_skip = ck.residual_skip;
  return m;
}

} // namespace neuralme
