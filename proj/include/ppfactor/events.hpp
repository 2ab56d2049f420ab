#pragma once

#include <chrono>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ppf {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

struct EventRecord {
  std::string unit_id;
  Timestamp timestamp;
};

/// Which columns of a delimited file carry the unit id and event time.
///
/// Explicit indices take precedence over header names. A zero delimiter means
/// auto-detect (tab if the first line contains one, comma otherwise).
struct ColumnSchema {
  std::string unit_column = "unit";
  std::string time_column = "start_time";
  std::optional<std::size_t> unit_index;
  std::optional<std::size_t> time_index;
  bool has_header = true;
  char delimiter = 0;
};

struct ParseReport {
  std::vector<EventRecord> records;
  std::vector<std::size_t> malformed_lines;  // 1-based line numbers
  std::size_t data_rows = 0;
};

/// ISO-8601 (`YYYY-MM-DD[T ]HH:MM[:SS[.fff]]`) or `M/D/YYYY HH:MM[:SS]`.
/// `24:00[:00]` is accepted and means midnight of the following day.
std::optional<Timestamp> parse_timestamp(std::string_view text);

/// Throws std::runtime_error if the stream is unreadable, FormatError if the
/// header lacks a configured column or more than 10% of rows are malformed.
ParseReport parse_events(std::istream& in, const ColumnSchema& schema);

/// Inclusive calendar-day range.
struct DateWindow {
  std::chrono::sys_days first;
  std::chrono::sys_days last;

  int days() const { return static_cast<int>((last - first).count()) + 1; }
};

/// Parses `YYYY-MM-DD`.
std::optional<std::chrono::sys_days> parse_date(std::string_view text);

/// One unit's replicated point pattern: days[i] holds the sorted event times
/// of replication i, all in [a, b).
struct ReplicatedPointData {
  std::string unit;
  double a = 0.0;
  double b = 24.0;
  std::vector<std::vector<double>> days;

  int n() const { return static_cast<int>(days.size()); }
  std::size_t count(int day) const { return days[static_cast<std::size_t>(day)].size(); }
  std::size_t total() const;
};

struct ReplicationSet {
  std::map<std::string, ReplicatedPointData> units;
  std::size_t outside_window = 0;
};

/// Bins records into one replication per calendar day of `window`, with time
/// of day in fractional hours rounded to 6 decimals. Days without events stay
/// as empty replications. Records outside the window (or outside [a, b)) are
/// skipped and counted.
ReplicationSet to_replications(const std::vector<EventRecord>& records, const DateWindow& window,
                               double a = 0.0, double b = 24.0);

struct CountSummary {
  std::size_t total = 0;
  double mean_daily = 0.0;
  std::size_t min_daily = 0;
  std::size_t max_daily = 0;
};

CountSummary summarize(const ReplicatedPointData& data);

/// Canonical replication document `{unit, n, a, b, days}`, times printed
/// with 6 decimals.
std::string replications_to_json(const ReplicatedPointData& data);
ReplicatedPointData replications_from_json(std::string_view text);

ReplicatedPointData load_replications(const std::string& path);
void save_replications(const ReplicatedPointData& data, const std::string& path);

}  // namespace ppf
