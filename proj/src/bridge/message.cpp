#include "hatpic/message.hpp"

#include <fnmatch.h>

#include <cmath>

namespace hatpic {

namespace {

bool all_finite(const nlohmann::json& j) {
  if (j.is_number_float()) return std::isfinite(j.get<double>());
  if (j.is_structured()) {
    for (const auto& v : j) {
      if (!all_finite(v)) return false;
    }
  }
  return true;
}

}  // namespace

std::string BusMessage::to_line() const {
  if (!std::isfinite(t) || !all_finite(body)) {
    throw MessageError("message on '" + topic + "' carries a non-finite number");
  }
  nlohmann::json j{{"topic", topic}, {"t", t}, {"body", body}};
  std::string line = j.dump();
  line.push_back('\n');
  return line;
}

BusMessage BusMessage::parse(std::string_view line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw MessageError(std::string("not JSON: ") + e.what());
  }
  if (!j.is_object()) throw MessageError("message must be a JSON object");

  BusMessage m;
  const auto topic = j.find("topic");
  if (topic == j.end() || !topic->is_string() || topic->get<std::string>().empty()) {
    throw MessageError("missing topic");
  }
  m.topic = topic->get<std::string>();

  if (const auto t = j.find("t"); t != j.end()) {
    if (!t->is_number() || !std::isfinite(t->get<double>())) throw MessageError("t must be a finite number");
    m.t = t->get<double>();
  }

  if (const auto body = j.find("body"); body != j.end()) {
    if (!body->is_object()) throw MessageError("body must be an object");
    m.body = *body;
  } else {
    // Console messages put their fields at the top level.
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() != "topic" && it.key() != "t") m.body[it.key()] = it.value();
    }
  }
  if (!all_finite(m.body)) throw MessageError("body carries a non-finite number");
  return m;
}

double BusMessage::number(const char* key) const {
  const auto it = body.find(key);
  if (it == body.end() || !it->is_number()) {
    throw MessageError(topic + ": missing numeric field '" + key + "'");
  }
  const double v = it->get<double>();
  if (!std::isfinite(v)) throw MessageError(topic + ": field '" + std::string(key) + "' not finite");
  return v;
}

bool topic_matches(std::string_view pattern, std::string_view topic) {
  return ::fnmatch(std::string(pattern).c_str(), std::string(topic).c_str(), 0) == 0;
}

}  // namespace hatpic
