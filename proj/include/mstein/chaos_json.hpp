#pragma once

// JSON descriptions of atom grids, chaos functionals and Poincare reports.
//
// Grid, either generated or listed atom by atom:
//   {"uniform": {"horizon": 1, "cells": 4, "sigma2": 1, "jumps": [[x, nu], ...]}}
//   {"mesh": 0.5, "atoms": [{"t": 0, "weight": 0.5}, {"t": 0, "x": 1, "intensity": 0.5}]}
// Functional, one entry per order, either sparse or dense in colex order:
//   {"kernels": [{"order": 0, "value": 0},
//                {"order": 2, "entries": [[[0, 1], 0.5], [[1, 3], -1]]},
//                {"order": 1, "values": [1, 2, 3, 4]}]}

#include <json.hpp>

#include <string>
#include <vector>

#include "mstein/discrete_chaos.hpp"
#include "mstein/error.hpp"

namespace mstein::chaos {

namespace detail {

template <class T>
T get(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) fail(ErrorCode::InvalidParameter, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidParameter, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline AtomGrid grid_from_json(const nlohmann::json& j) {
  if (j.contains("uniform")) {
    const auto& u = j.at("uniform");
    std::vector<std::pair<double, double>> jumps;
    if (u.contains("jumps"))
      for (const auto& p : u.at("jumps")) {
        require(p.is_array() && p.size() == 2, ErrorCode::InvalidParameter, "jumps are [x, nu] pairs");
        jumps.emplace_back(p[0].get<double>(), p[1].get<double>());
      }
    return AtomGrid::uniform(detail::get<double>(u, "horizon"), detail::get<std::size_t>(u, "cells"),
                             u.value("sigma2", 0.0), jumps);
  }
  std::vector<Atom> atoms;
  for (const auto& a : j.at("atoms")) {
    Atom at;
    at.t = detail::get<double>(a, "t");
    if (a.contains("x")) {
      at.jump = true;
      at.x = detail::get<double>(a, "x");
      at.intensity = detail::get<double>(a, "intensity");
    } else {
      at.weight = detail::get<double>(a, "weight");
    }
    atoms.push_back(at);
  }
  return AtomGrid::from_atoms(std::move(atoms), detail::get<double>(j, "mesh"));
}

inline ChaosFunctional functional_from_json(const nlohmann::json& j, std::size_t atoms) {
  ChaosFunctional F(atoms, 0);
  for (const auto& k : j.at("kernels")) {
    const auto q = detail::get<std::size_t>(k, "order");
    Kernel& ker = F.kernel(q);
    if (q == 0 && k.contains("value")) {
      ker.values[0] = k.at("value").get<double>();
    } else if (k.contains("values")) {
      const auto v = k.at("values").get<std::vector<double>>();
      require(v.size() == ker.values.size(), ErrorCode::InvalidParameter,
              "order " + std::to_string(q) + " needs " + std::to_string(ker.values.size()) + " dense values");
      ker.values = v;
    } else {
      for (const auto& e : k.at("entries")) {
        require(e.is_array() && e.size() == 2, ErrorCode::InvalidParameter, "entries are [[atoms...], value]");
        ker.set(e[0].get<std::vector<std::size_t>>(), e[1].get<double>());
      }
    }
  }
  return F;
}

inline nlohmann::json to_json(const ChaosFunctional& F) {
  nlohmann::json ks = nlohmann::json::array();
  for (const auto& k : F.kernels) ks.push_back({{"order", k.order}, {"values", k.values}});
  return {{"kernels", ks}};
}

inline nlohmann::json to_json(const PoincareReport& r) {
  return {{"variance", r.variance},
          {"derivative_norm", r.derivative_norm},
          {"inverse_derivative_norm", r.inverse_derivative_norm},
          {"gamma_mean", r.gamma_mean},
          {"poincare_holds", r.poincare_holds},
          {"poincare_equality", r.poincare_equality},
          {"inverse_bound_holds", r.inverse_bound_holds},
          {"gamma_identity_error", r.gamma_identity_error},
          {"mc_gamma_gap", r.mc_gamma_gap},
          {"mc_gamma_gap_se", r.mc_gamma_gap_se},
          {"mc_jump_term", r.mc_jump_term},
          {"mc_jump_term_se", r.mc_jump_term_se},
          {"replications", r.replications},
          {"seed", r.seed}};
}

}  // namespace mstein::chaos
