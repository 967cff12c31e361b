#include "hatpic/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

namespace hatpic {

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& rule) {
  throw ScenarioError(where + ": " + rule);
}

class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  void number(const char* key, double& slot) {
    const toml::node* n = find(key);
    if (!n) return;
    if (const auto i = n->value_exact<std::int64_t>()) {
      slot = static_cast<double>(*i);
    } else if (const auto d = n->value_exact<double>()) {
      slot = *d;
    } else {
      fail(at(key), "must be a number");
    }
  }

  void string(const char* key, std::string& slot) {
    const toml::node* n = find(key);
    if (!n) return;
    const auto s = n->value_exact<std::string>();
    if (!s) fail(at(key), "must be a string");
    slot = *s;
  }

  std::optional<std::int64_t> integer(const char* key) {
    const toml::node* n = find(key);
    if (!n) return std::nullopt;
    const auto i = n->value_exact<std::int64_t>();
    if (!i) fail(at(key), "must be an integer");
    return i;
  }

  void known(const char* key) { seen_.insert(key); }

  /// Every key must have been consumed.
  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!seen_.count(std::string(k.str()))) fail(at(std::string(k.str())), "unknown key");
    }
  }

  std::string at(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  const toml::node* find(const char* key) {
    seen_.insert(key);
    return table_ ? table_->get(key) : nullptr;
  }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> seen_;
};

const toml::table* subtable(const toml::table& root, const char* name) {
  const toml::node* n = root.get(name);
  if (!n) return nullptr;
  if (!n->is_table()) fail(name, "must be a table ([" + std::string(name) + "])");
  return n->as_table();
}

template <typename F>
void prefixed(const std::string& prefix, F&& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(prefix + e.what());
  }
}

}  // namespace

void Scenario::validate() const {
  if (schema != 1) fail("schema", "unsupported version " + std::to_string(schema) + " (expected 1)");
  if (!(std::isfinite(duration) && duration > 0.0)) fail("duration", "must be > 0");
  prefixed("admittance.", [&] { firmware.admittance.validate(); });
  prefixed("stiffness.", [&] { firmware.stiffness.validate(); });
  prefixed("servo.", [&] { firmware.servo.validate(firmware.stiffness); });
  try {
    firmware.operator_input.validate();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    if (msg.rfind("operator.noise_std", 0) == 0) fail("firmware.operator_noise", "must be >= 0");
    throw ScenarioError(msg);
  }
  try {
    firmware.validate();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    throw ScenarioError((msg.rfind("initial_", 0) == 0 ? "joystick." : "firmware.") + msg);
  }
  prefixed("world.", [&] { world.validate(); });
  if (!(std::isfinite(robot_initial.p) && std::isfinite(robot_initial.v))) {
    fail("world.initial_p", "must be finite");
  }
  if (!(std::isfinite(robot_state_rate) && robot_state_rate > 0.0)) fail("world.state_rate", "must be > 0");
  prefixed("bridge.", [&] { bridge.validate(); });
}

DeviceParams Scenario::device_params() const {
  DeviceParams p;
  p.stiffness = firmware.stiffness;
  p.d_adm = firmware.admittance.d_adm;
  p.m_adm = firmware.admittance.m_adm;
  p.tau_max = firmware.admittance.tau_max;
  p.theta_max = firmware.servo.theta_max;
  p.k_stop = firmware.servo.k_stop;
  return p;
}

Scenario parse_scenario(std::string_view text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << e.source().begin.line << ": " << e.description();
    throw ScenarioError(os.str());
  }

  Scenario sc;
  Section top(&root, "");
  const auto schema = top.integer("schema");
  if (!schema) fail("schema", "missing (expected schema = 1)");
  sc.schema = static_cast<int>(*schema);
  top.number("duration", sc.duration);
  if (const auto seed = top.integer("seed")) {
    if (*seed < 0) fail("seed", "must be >= 0");
    sc.seed = static_cast<std::uint64_t>(*seed);
  }

  auto& fw = sc.firmware;
  {
    Section s(subtable(root, "admittance"), "admittance");
    s.number("d_adm", fw.admittance.d_adm);
    s.number("m_adm", fw.admittance.m_adm);
    s.number("tau_max", fw.admittance.tau_max);
    s.number("dt", fw.admittance.dt);
    s.finish();
  }
  {
    Section s(subtable(root, "stiffness"), "stiffness");
    s.number("theta0", fw.stiffness.theta0);
    s.number("q_dz", fw.stiffness.q_dz);
    s.number("n", fw.stiffness.n);
    s.number("k_min", fw.stiffness.k_min);
    s.number("k_max", fw.stiffness.k_max);
    s.finish();
  }
  {
    Section s(subtable(root, "servo"), "servo");
    s.number("theta_max", fw.servo.theta_max);
    s.number("k_stop", fw.servo.k_stop);
    s.number("position_quantum", fw.servo.position_quantum);
    s.number("torque_quantum", fw.servo.torque_quantum);
    s.finish();
  }
  {
    Section s(subtable(root, "joystick"), "joystick");
    s.number("initial_theta", fw.initial_theta);
    s.number("initial_omega", fw.initial_omega);
    s.finish();
  }
  {
    Section s(subtable(root, "firmware"), "firmware");
    s.number("telemetry_rate", fw.telemetry_rate);
    s.number("feedback_timeout", fw.feedback_timeout);
    s.number("feedback_decay", fw.feedback_decay);
    s.number("operator_noise", fw.operator_input.noise_std);
    s.finish();
  }
  if (const toml::node* ops = root.get("operator")) {
    const toml::array* arr = ops->as_array();
    if (!arr || !arr->is_array_of_tables()) fail("operator", "must be an array of tables ([[operator]])");
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const std::string name = "operator[" + std::to_string(i) + "]";
      Section s(arr->get(i)->as_table(), name);
      OperatorSegment seg;
      std::string kind = "hold";
      s.string("kind", kind);
      const auto k = operator_kind_from(kind);
      if (!k) fail(s.at("kind"), "expected one of step, sine, chirp, hold, external");
      seg.kind = *k;
      s.number("amplitude", seg.amplitude);
      s.number("frequency", seg.frequency);
      s.number("start", seg.start);
      s.number("stop", seg.stop);
      s.finish();
      fw.operator_input.segments.push_back(seg);
    }
  }
  {
    Section s(subtable(root, "world"), "world");
    s.number("bandwidth", sc.world.bandwidth);
    s.number("wall", sc.world.wall);
    s.number("k_wall", sc.world.k_wall);
    s.number("b_wall", sc.world.b_wall);
    s.number("k_virtual", sc.world.k_virtual);
    s.number("v_limit", sc.world.v_limit);
    s.number("state_rate", sc.robot_state_rate);
    s.number("initial_p", sc.robot_initial.p);
    s.finish();
  }
  {
    Section s(subtable(root, "bridge"), "bridge");
    s.string("device", sc.bridge.device);
    s.string("bus", sc.bridge.bus);
    s.string("ws", sc.bridge.ws);
    s.number("v_max", sc.bridge.v_max);
    s.number("publish_rate", sc.bridge.publish_rate);
    s.number("feedback_gain", sc.bridge.feedback_gain);
    s.number("f_max", sc.bridge.f_max);
    s.number("input_deadzone", sc.bridge.input_deadzone);
    s.number("staleness_timeout", sc.bridge.staleness_timeout);
    s.number("staleness_decay", sc.bridge.staleness_decay);
    s.number("link_timeout", sc.bridge.link_timeout);
    s.finish();
  }
  for (const char* table : {"admittance", "stiffness", "servo", "joystick", "firmware", "operator", "world",
                            "bridge"}) {
    top.known(table);
  }
  top.finish();

  fw.seed = sc.seed;
  sc.validate();
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(path.string() + ": cannot open");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_scenario(text.str(), path.string());
}

}  // namespace hatpic
