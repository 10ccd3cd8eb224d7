#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcbsde/chain.hpp"
#include "mcbsde/driver.hpp"
#include "mcbsde/linear.hpp"

namespace mcbsde {

using nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kSchemaVersion = 1;

/// run-block knobs; subcommands read what they need.
struct RunParams {
  double step = 0.0;
  int n_paths = 0;
  std::optional<std::uint64_t> seed;
  double eps = 0.0; // 0 selects half the admissible threshold
  double s = 0.0;
  double mid = 0.0;
  double t = -1.0; // < 0 selects the chain horizon
  std::string theorem = "4.2";
  std::string which; // counterexample selector
  double q_shift = 0.3;
  std::vector<double> lambdas{0.5, 2.0};
  std::vector<std::string> properties;
  double evaluation = 0.0; // essential-range probe value
  bool evaluation_set = false;
};

struct Scenario {
  RateModel model;
  int initial_state = 0;
  json driver_block;
  json driver2_block; // comparison second driver, optional
  std::vector<Vec> terminal;
  std::vector<Vec> terminal2;
  std::vector<int> absorbing;
  RunParams run;
};

namespace detail {

template <class T>
T require_field(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("missing field '" + key + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field '" + key + "' in " + where + " has the wrong type");
  }
}

inline Mat parse_matrix(const json& j, int rows, int cols, const std::string& where) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows)
    throw ConfigError(where + " must be a " + std::to_string(rows) + "-row matrix");
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = j.at(static_cast<std::size_t>(r));
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      throw ConfigError(where + " row " + std::to_string(r + 1) + " must have " +
                        std::to_string(cols) + " entries");
    for (int c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

inline Vec parse_vector(const json& j, int size, const std::string& where) {
  if (!j.is_array() || static_cast<int>(j.size()) != size)
    throw ConfigError(where + " must have " + std::to_string(size) + " entries");
  Vec v(size);
  for (int i = 0; i < size; ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

} // namespace detail

inline RateModel parse_chain(const json& chain) {
  RateModel m;
  m.num_states = detail::require_field<int>(chain, "num_states", "chain");
  m.epsilon_r = detail::require_field<double>(chain, "epsilon_r", "chain");
  m.horizon = detail::require_field<double>(chain, "horizon", "chain");
  if (!chain.contains("pieces") || !chain.at("pieces").is_array() || chain.at("pieces").empty())
    throw ConfigError("chain.pieces must be a nonempty list");
  int idx = 0;
  for (const json& piece : chain.at("pieces")) {
    ++idx;
    std::string where = "chain.pieces[" + std::to_string(idx) + "]";
    RatePiece p;
    p.t_end = detail::require_field<double>(piece, "t_end", where);
    p.a = detail::parse_matrix(piece.at("rates"), m.num_states, m.num_states, where + ".rates");
    m.pieces.push_back(std::move(p));
  }
  return m;
}

inline LinearDriverSpec parse_linear_spec(const json& block, const RateModel& model) {
  LinearDriverSpec spec;
  spec.dim = block.value("dim", 1);
  if (!block.contains("pieces") || !block.at("pieces").is_array())
    throw ConfigError("linear driver needs a pieces list aligned with the chain pieces");
  int idx = 0;
  for (const json& piece : block.at("pieces")) {
    ++idx;
    std::string where = "driver.pieces[" + std::to_string(idx) + "]";
    LinearCoeffs c;
    c.beta = detail::parse_matrix(piece.at("beta"), spec.dim, spec.dim, where + ".beta");
    c.gamma = detail::parse_vector(piece.at("gamma"), spec.dim, where + ".gamma");
    c.phi = detail::parse_vector(piece.at("phi"), spec.dim, where + ".phi");
    const json& alphas = piece.at("alpha");
    if (!alphas.is_array() || static_cast<int>(alphas.size()) != model.num_states)
      throw ConfigError(where + ".alpha must hold one K x N block per state");
    for (const json& a : alphas)
      c.alpha.push_back(detail::parse_matrix(a, spec.dim, model.num_states, where + ".alpha[state]"));
    spec.pieces.push_back(std::move(c));
  }
  return spec;
}

/// Driver registry: zero | linear {...} | znorm {c} | zdrift | table {values}.
inline Driver build_driver(const json& block, const RateModel& model) {
  std::string kind = detail::require_field<std::string>(block, "kind", "driver");
  if (kind == "zero") return make_zero_driver(block.value("dim", 1));
  if (kind == "znorm") return make_znorm_driver(detail::require_field<double>(block, "c", "driver"));
  if (kind == "zdrift") return make_zdrift_driver();
  if (kind == "linear") return make_linear_driver(parse_linear_spec(block, model), model);
  if (kind == "table") {
    const json& values = block.at("values");
    if (!values.is_array() || values.size() != model.pieces.size())
      throw ConfigError("driver.values must hold one block per chain piece");
    int dim = block.value("dim", 1);
    std::vector<std::vector<Vec>> table;
    for (const json& piece : values) {
      if (!piece.is_array() || static_cast<int>(piece.size()) != model.num_states)
        throw ConfigError("driver.values piece must hold one vector per state");
      std::vector<Vec> row;
      for (const json& v : piece) row.push_back(detail::parse_vector(v, dim, "driver.values entry"));
      table.push_back(std::move(row));
    }
    return make_table_driver(std::move(table), model);
  }
  throw ConfigError("unknown driver kind '" + kind + "'");
}

inline std::vector<Vec> parse_terminal(const json& values, int num_states, int dim,
                                       const std::string& where) {
  if (!values.is_array() || static_cast<int>(values.size()) != num_states)
    throw ConfigError(where + " must hold one vector per state");
  std::vector<Vec> g;
  for (int i = 0; i < num_states; ++i)
    g.push_back(detail::parse_vector(values.at(static_cast<std::size_t>(i)), dim,
                                     where + "[" + std::to_string(i + 1) + "]"));
  return g;
}

inline Scenario parse_scenario(const json& root) {
  if (!root.is_object()) throw ConfigError("config root must be an object");
  int version = detail::require_field<int>(root, "schema_version", "config");
  if (version != kSchemaVersion)
    throw ConfigError("unsupported schema_version " + std::to_string(version));
  if (!root.contains("chain")) throw ConfigError("missing 'chain' block");

  Scenario sc;
  sc.model = parse_chain(root.at("chain"));
  ValidationReport vr = validate_rate_model(sc.model);
  if (!vr.ok) throw ConfigError("invalid chain: " + vr.summary());

  int init = root.at("chain").value("initial_state", 1);
  if (init < 1 || init > sc.model.num_states)
    throw ConfigError("chain.initial_state out of 1..N");
  sc.initial_state = init - 1;

  sc.driver_block = root.value("driver", json{{"kind", "zero"}});
  if (root.contains("driver2")) sc.driver2_block = root.at("driver2");

  if (root.contains("terminal")) {
    const json& term = root.at("terminal");
    int dim = sc.driver_block.value("dim", 1);
    if (term.contains("values"))
      sc.terminal = parse_terminal(term.at("values"), sc.model.num_states, dim, "terminal.values");
    if (term.contains("values2"))
      sc.terminal2 = parse_terminal(term.at("values2"), sc.model.num_states, dim, "terminal.values2");
    if (term.contains("absorbing")) {
      for (const json& a : term.at("absorbing")) {
        int s = a.get<int>();
        if (s < 1 || s > sc.model.num_states) throw ConfigError("terminal.absorbing out of 1..N");
        sc.absorbing.push_back(s - 1);
      }
    }
  }

  if (root.contains("run")) {
    const json& run = root.at("run");
    sc.run.step = run.value("step", 0.0);
    sc.run.n_paths = run.value("n_paths", 0);
    if (run.contains("seed")) sc.run.seed = run.at("seed").get<std::uint64_t>();
    sc.run.eps = run.value("eps", 0.0);
    sc.run.s = run.value("s", 0.0);
    sc.run.mid = run.value("mid", 0.0);
    sc.run.t = run.value("t", -1.0);
    sc.run.theorem = run.value("theorem", "4.2");
    sc.run.which = run.value("which", "");
    sc.run.q_shift = run.value("q_shift", 0.3);
    if (run.contains("lambdas"))
      sc.run.lambdas = run.at("lambdas").get<std::vector<double>>();
    if (run.contains("properties"))
      sc.run.properties = run.at("properties").get<std::vector<std::string>>();
    if (run.contains("evaluation")) {
      sc.run.evaluation = run.at("evaluation").get<double>();
      sc.run.evaluation_set = true;
    }
  }
  return sc;
}

} // namespace mcbsde
