#include "nudge/events.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace nudge {

using nlohmann::json;

namespace {

const std::string kKindNames[] = {"login",        "order",        "nudge_sent",
                                  "nudge_opened", "nudge_closed", "nudge_expired"};

bool is_nudge_kind(EventKind k) {
  return k == EventKind::nudge_sent || k == EventKind::nudge_opened ||
         k == EventKind::nudge_closed || k == EventKind::nudge_expired;
}

}  // namespace

const std::string& to_string(EventKind kind) { return kKindNames[static_cast<size_t>(kind)]; }

std::optional<EventKind> event_kind_from_string(const std::string& s) {
  for (size_t i = 0; i < 6; ++i) {
    if (s == kKindNames[i]) return static_cast<EventKind>(i);
  }
  return std::nullopt;
}

double OrderPayload::expenditure() const {
  double total = 0.0;
  for (const auto& line : lines) total += static_cast<double>(line.qty) * line.price;
  return total;
}

std::string validate_event(const EventRecord& r) {
  if (r.user_id.empty()) return "user";
  if (r.pharmacy_id.empty()) return "pharmacy";
  switch (r.kind) {
    case EventKind::login:
      if (!std::holds_alternative<LoginPayload>(r.payload)) return "payload";
      if (const auto& lp = r.login(); lp.session_secs &&
                                      (!std::isfinite(*lp.session_secs) || *lp.session_secs < 0))
        return "payload.secs";
      break;
    case EventKind::order: {
      if (!std::holds_alternative<OrderPayload>(r.payload)) return "payload";
      const auto& op = r.order();
      if (op.lines.empty()) return "payload.lines";
      for (const auto& line : op.lines) {
        if (line.sku.empty()) return "payload.lines.sku";
        if (line.qty <= 0) return "payload.lines.qty";
        if (!(line.price >= 0.0) || !std::isfinite(line.price)) return "payload.lines.price";
      }
      break;
    }
    default: {
      if (!std::holds_alternative<NudgePayload>(r.payload)) return "payload";
      const auto& np = r.nudge();
      if (np.decision_id.empty()) return "payload.decision";
      if (np.anchor_sku.empty()) return "payload.anchor";
      if (np.target_sku.empty()) return "payload.target";
      if (np.anchor_sku == np.target_sku) return "payload.target";
      break;
    }
  }
  return {};
}

namespace {

EventRecord record_from_json(const json& j, std::size_t line_no) {
  auto require_string = [&](const char* field) -> std::string {
    if (!j.contains(field) || !j[field].is_string())
      throw SchemaViolation(line_no, field, "missing or not a string");
    return j[field].get<std::string>();
  };

  EventRecord r;
  std::string ts = require_string("ts");
  auto parsed = parse_iso8601_utc(ts);
  if (!parsed) throw SchemaViolation(line_no, "ts", "not an ISO-8601 UTC timestamp");
  r.ts = *parsed;
  r.user_id = require_string("user");
  r.pharmacy_id = require_string("pharmacy");
  auto kind = event_kind_from_string(require_string("kind"));
  if (!kind) throw SchemaViolation(line_no, "kind", "unknown event kind");
  r.kind = *kind;

  if (!j.contains("payload") || !j["payload"].is_object())
    throw SchemaViolation(line_no, "payload", "missing or not an object");
  const json& p = j["payload"];

  switch (r.kind) {
    case EventKind::login: {
      LoginPayload lp;
      for (auto it = p.begin(); it != p.end(); ++it) {
        if (it.key() == "lang" && it.value().is_string())
          lp.lang = it.value().get<std::string>();
        else if (it.key() == "region" && it.value().is_string())
          lp.region = it.value().get<std::string>();
        else if (it.key() == "secs" && it.value().is_number())
          lp.session_secs = it.value().get<double>();
        else
          throw SchemaViolation(line_no, "payload." + it.key(), "unexpected login payload field");
      }
      r.payload = std::move(lp);
      break;
    }
    case EventKind::order: {
      if (!p.contains("lines") || !p["lines"].is_array())
        throw SchemaViolation(line_no, "payload.lines", "missing or not an array");
      OrderPayload op;
      for (const json& lj : p["lines"]) {
        if (!lj.is_object() || !lj.contains("sku") || !lj["sku"].is_string() ||
            !lj.contains("qty") || !lj["qty"].is_number_integer() || !lj.contains("price") ||
            !lj["price"].is_number())
          throw SchemaViolation(line_no, "payload.lines", "line must be {sku, qty, price}");
        op.lines.push_back(OrderLine{lj["sku"].get<std::string>(), lj["qty"].get<std::int64_t>(),
                                     lj["price"].get<double>()});
      }
      r.payload = std::move(op);
      break;
    }
    default: {
      NudgePayload np;
      if (!p.contains("decision") || !p["decision"].is_string() || !p.contains("anchor") ||
          !p["anchor"].is_string() || !p.contains("target") || !p["target"].is_string())
        throw SchemaViolation(line_no, "payload", "nudge payload must be {decision, anchor, target}");
      np.decision_id = p["decision"].get<std::string>();
      np.anchor_sku = p["anchor"].get<std::string>();
      np.target_sku = p["target"].get<std::string>();
      r.payload = std::move(np);
      break;
    }
  }

  if (std::string field = validate_event(r); !field.empty())
    throw SchemaViolation(line_no, field, "invariant violated");
  return r;
}

json record_to_json(const EventRecord& r) {
  json j;
  j["ts"] = format_iso8601_utc(r.ts);
  j["user"] = r.user_id;
  j["pharmacy"] = r.pharmacy_id;
  j["kind"] = to_string(r.kind);
  json p = json::object();
  switch (r.kind) {
    case EventKind::login: {
      const auto& lp = r.login();
      if (lp.lang) p["lang"] = *lp.lang;
      if (lp.region) p["region"] = *lp.region;
      if (lp.session_secs) p["secs"] = *lp.session_secs;
      break;
    }
    case EventKind::order: {
      json lines = json::array();
      for (const auto& line : r.order().lines)
        lines.push_back({{"sku", line.sku}, {"qty", line.qty}, {"price", line.price}});
      p["lines"] = std::move(lines);
      break;
    }
    default: {
      const auto& np = r.nudge();
      p["decision"] = np.decision_id;
      p["anchor"] = np.anchor_sku;
      p["target"] = np.target_sku;
      break;
    }
  }
  j["payload"] = std::move(p);
  return j;
}

}  // namespace

std::vector<EventRecord> parse_event_log(std::istream& in) {
  std::vector<EventRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw MalformedLine(line_no, "unparseable JSON");
    if (!j.is_object()) throw MalformedLine(line_no, "not a JSON object");
    records.push_back(record_from_json(j, line_no));
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.ts < b.ts; });
  return records;
}

std::vector<EventRecord> parse_event_log_string(const std::string& text) {
  std::istringstream in(text);
  return parse_event_log(in);
}

std::vector<EventRecord> load_event_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open event log: " + path);
  return parse_event_log(in);
}

std::string event_to_json_line(const EventRecord& record) { return record_to_json(record).dump(); }

void write_event_log(const std::vector<EventRecord>& records, std::ostream& out) {
  for (const auto& r : records) out << event_to_json_line(r) << '\n';
}

std::string write_event_log_string(const std::vector<EventRecord>& records) {
  std::ostringstream out;
  write_event_log(records, out);
  return out.str();
}

void save_event_log(const std::vector<EventRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write event log: " + path);
  write_event_log(records, out);
}

}  // namespace nudge
