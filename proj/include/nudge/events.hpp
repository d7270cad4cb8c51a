#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "nudge/time_util.hpp"

namespace nudge {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MalformedLine : Error {
  MalformedLine(std::size_t line_no, const std::string& why)
      : Error("malformed line " + std::to_string(line_no) + ": " + why), line(line_no) {}
  std::size_t line;
};

struct SchemaViolation : Error {
  SchemaViolation(std::size_t line_no, const std::string& field, const std::string& why)
      : Error("schema violation at line " + std::to_string(line_no) + ", field '" + field +
              "': " + why),
        line(line_no),
        field(field) {}
  std::size_t line;
  std::string field;
};

enum class EventKind { login, order, nudge_sent, nudge_opened, nudge_closed, nudge_expired };

const std::string& to_string(EventKind kind);
std::optional<EventKind> event_kind_from_string(const std::string& s);

struct OrderLine {
  std::string sku;
  std::int64_t qty = 0;      // positive
  double price = 0.0;        // unit price, >= 0

  bool operator==(const OrderLine&) const = default;
};

struct OrderPayload {
  std::vector<OrderLine> lines;  // at least one

  double expenditure() const;

  bool operator==(const OrderPayload&) const = default;
};

struct NudgePayload {
  std::string decision_id;
  std::string anchor_sku;  // the frequently purchased item
  std::string target_sku;  // the infrequently purchased item

  bool operator==(const NudgePayload&) const = default;
};

// Login events may carry profile-ish attributes so that eligibility and
// context features are computable from the log alone.
struct LoginPayload {
  std::optional<std::string> lang;
  std::optional<std::string> region;
  std::optional<double> session_secs;

  bool operator==(const LoginPayload&) const = default;
};

struct EventRecord {
  UnixSeconds ts = 0;
  std::string user_id;
  std::string pharmacy_id;
  EventKind kind = EventKind::login;
  std::variant<LoginPayload, OrderPayload, NudgePayload> payload;

  const OrderPayload& order() const { return std::get<OrderPayload>(payload); }
  const NudgePayload& nudge() const { return std::get<NudgePayload>(payload); }
  const LoginPayload& login() const { return std::get<LoginPayload>(payload); }

  bool operator==(const EventRecord&) const = default;
};

// Parses one JSON object per line; result is stably sorted by timestamp.
// Throws MalformedLine / SchemaViolation.
std::vector<EventRecord> parse_event_log(std::istream& in);
std::vector<EventRecord> parse_event_log_string(const std::string& text);
std::vector<EventRecord> load_event_log(const std::string& path);

// One JSON line per record, in list order. parse(write(r)) == r.
void write_event_log(const std::vector<EventRecord>& records, std::ostream& out);
std::string write_event_log_string(const std::vector<EventRecord>& records);
void save_event_log(const std::vector<EventRecord>& records, const std::string& path);

std::string event_to_json_line(const EventRecord& record);

// Validates one record's invariants; returns a violated-field name or empty.
std::string validate_event(const EventRecord& record);

}  // namespace nudge
