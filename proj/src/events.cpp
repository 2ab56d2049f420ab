#include "ppfactor/events.hpp"

#include "ppfactor/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ppf {

namespace {

using namespace std::chrono;

// Reads an unsigned decimal of 1..max_digits digits starting at pos.
std::optional<int> read_int(std::string_view s, std::size_t& pos, std::size_t min_digits,
                            std::size_t max_digits) {
  std::size_t start = pos;
  while (pos < s.size() && pos - start < max_digits && s[pos] >= '0' && s[pos] <= '9') ++pos;
  if (pos - start < min_digits) return std::nullopt;
  int value = 0;
  std::from_chars(s.data() + start, s.data() + pos, value);
  return value;
}

bool expect(std::string_view s, std::size_t& pos, char c) {
  if (pos < s.size() && s[pos] == c) {
    ++pos;
    return true;
  }
  return false;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<Timestamp> assemble(int y, int mo, int d, int hh, int mm, int ss, int ms) {
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  if (hh > 24 || mm > 59 || ss > 59) return std::nullopt;
  if (hh == 24 && (mm != 0 || ss != 0 || ms != 0)) return std::nullopt;
  return Timestamp{sys_days{ymd}} + hours{hh} + minutes{mm} + seconds{ss} + milliseconds{ms};
}

// HH:MM[:SS[.fff]] starting at pos, must consume the rest of the string.
bool read_clock(std::string_view s, std::size_t pos, int& hh, int& mm, int& ss, int& ms) {
  auto h = read_int(s, pos, 1, 2);
  if (!h || !expect(s, pos, ':')) return false;
  auto m = read_int(s, pos, 2, 2);
  if (!m) return false;
  hh = *h;
  mm = *m;
  ss = 0;
  ms = 0;
  if (expect(s, pos, ':')) {
    auto sec = read_int(s, pos, 2, 2);
    if (!sec) return false;
    ss = *sec;
    if (expect(s, pos, '.')) {
      std::size_t start = pos;
      auto frac = read_int(s, pos, 1, 9);
      if (!frac) return false;
      double scaled = *frac * std::pow(10.0, 3.0 - static_cast<double>(pos - start));
      ms = static_cast<int>(std::floor(scaled));
    }
  }
  if (pos < s.size() && s[pos] == 'Z') ++pos;
  return pos == s.size();
}

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i < line.size() && line[i] == '"') quoted = !quoted;
    if (i == line.size() || (line[i] == delim && !quoted)) {
      std::string_view field = trim(line.substr(start, i - start));
      if (field.size() >= 2 && field.front() == '"' && field.back() == '"') {
        field = field.substr(1, field.size() - 2);
      }
      out.push_back(field);
      start = i + 1;
    }
  }
  return out;
}

std::string format_fixed6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

}  // namespace

std::optional<Timestamp> parse_timestamp(std::string_view text) {
  std::string_view s = trim(text);
  std::size_t pos = 0;
  int hh = 0, mm = 0, ss = 0, ms = 0;
  if (s.size() >= 10 && s[4] == '-') {
    auto y = read_int(s, pos, 4, 4);
    if (!y || !expect(s, pos, '-')) return std::nullopt;
    auto mo = read_int(s, pos, 2, 2);
    if (!mo || !expect(s, pos, '-')) return std::nullopt;
    auto d = read_int(s, pos, 2, 2);
    if (!d) return std::nullopt;
    if (pos == s.size()) return assemble(*y, *mo, *d, 0, 0, 0, 0);
    if (!(expect(s, pos, 'T') || expect(s, pos, ' '))) return std::nullopt;
    if (!read_clock(s, pos, hh, mm, ss, ms)) return std::nullopt;
    return assemble(*y, *mo, *d, hh, mm, ss, ms);
  }
  auto mo = read_int(s, pos, 1, 2);
  if (!mo || !expect(s, pos, '/')) return std::nullopt;
  auto d = read_int(s, pos, 1, 2);
  if (!d || !expect(s, pos, '/')) return std::nullopt;
  auto y = read_int(s, pos, 4, 4);
  if (!y) return std::nullopt;
  if (!expect(s, pos, ' ')) return std::nullopt;
  while (pos < s.size() && s[pos] == ' ') ++pos;
  if (!read_clock(s, pos, hh, mm, ss, ms)) return std::nullopt;
  return assemble(*y, *mo, *d, hh, mm, ss, ms);
}

std::optional<sys_days> parse_date(std::string_view text) {
  auto ts = parse_timestamp(text);
  if (!ts) return std::nullopt;
  auto day = floor<days>(*ts);
  if (*ts != Timestamp{day}) return std::nullopt;
  return day;
}

ParseReport parse_events(std::istream& in, const ColumnSchema& schema) {
  if (!in) throw std::runtime_error("event stream is not readable");
  ParseReport report;
  std::string line;
  std::size_t line_no = 0;
  char delim = schema.delimiter;
  std::size_t unit_col = schema.unit_index.value_or(0);
  std::size_t time_col = schema.time_index.value_or(1);
  bool header_pending = schema.has_header;
  bool delim_known = delim != 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (!delim_known) {
      delim = line.find('\t') != std::string::npos ? '\t' : ',';
      delim_known = true;
    }
    if (header_pending) {
      header_pending = false;
      auto fields = split_fields(line, delim);
      auto locate = [&](const std::string& name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < fields.size(); ++i) {
          if (fields[i] == name) return i;
        }
        return std::nullopt;
      };
      if (!schema.unit_index) {
        auto idx = locate(schema.unit_column);
        if (!idx) throw FormatError("header has no unit column '" + schema.unit_column + "'");
        unit_col = *idx;
      }
      if (!schema.time_index) {
        auto idx = locate(schema.time_column);
        if (!idx) throw FormatError("header has no time column '" + schema.time_column + "'");
        time_col = *idx;
      }
      continue;
    }
    if (trim(line).empty()) continue;
    ++report.data_rows;
    auto fields = split_fields(line, delim);
    if (fields.size() <= std::max(unit_col, time_col) || fields[unit_col].empty()) {
      report.malformed_lines.push_back(line_no);
      continue;
    }
    auto ts = parse_timestamp(fields[time_col]);
    if (!ts) {
      report.malformed_lines.push_back(line_no);
      continue;
    }
    report.records.push_back(EventRecord{std::string(fields[unit_col]), *ts});
  }
  if (in.bad()) throw std::runtime_error("I/O error while reading event stream");
  if (report.malformed_lines.size() * 10 > report.data_rows) {
    throw FormatError(std::to_string(report.malformed_lines.size()) + " of " +
                      std::to_string(report.data_rows) + " rows are malformed (limit 10%)");
  }
  return report;
}

std::size_t ReplicatedPointData::total() const {
  std::size_t sum = 0;
  for (const auto& d : days) sum += d.size();
  return sum;
}

ReplicationSet to_replications(const std::vector<EventRecord>& records, const DateWindow& window,
                               double a, double b) {
  if (window.days() <= 0) throw std::invalid_argument("date window is empty");
  if (!(a < b)) throw std::invalid_argument("time domain requires a < b");
  const auto n = static_cast<std::size_t>(window.days());
  ReplicationSet out;
  for (const auto& rec : records) {
    const auto day = floor<days>(rec.timestamp);
    if (day < window.first || day > window.last) {
      ++out.outside_window;
      continue;
    }
    const double ms = static_cast<double>((rec.timestamp - Timestamp{day}).count());
    double t = std::round(ms / 3.6e6 * 1e6) / 1e6;
    if (t < a || t >= b) {
      ++out.outside_window;
      continue;
    }
    auto [it, inserted] = out.units.try_emplace(rec.unit_id);
    auto& data = it->second;
    if (inserted) {
      data.unit = rec.unit_id;
      data.a = a;
      data.b = b;
      data.days.resize(n);
    }
    data.days[static_cast<std::size_t>((day - window.first).count())].push_back(t);
  }
  for (auto& [unit, data] : out.units) {
    for (auto& d : data.days) std::sort(d.begin(), d.end());
  }
  return out;
}

CountSummary summarize(const ReplicatedPointData& data) {
  CountSummary s;
  if (data.days.empty()) return s;
  s.min_daily = data.days.front().size();
  for (const auto& d : data.days) {
    s.total += d.size();
    s.min_daily = std::min(s.min_daily, d.size());
    s.max_daily = std::max(s.max_daily, d.size());
  }
  s.mean_daily = static_cast<double>(s.total) / static_cast<double>(data.days.size());
  return s;
}

std::string replications_to_json(const ReplicatedPointData& data) {
  std::string out = "{\"unit\":" + nlohmann::json(data.unit).dump() +
                    ",\"n\":" + std::to_string(data.n()) + ",\"a\":" + format_fixed6(data.a) +
                    ",\"b\":" + format_fixed6(data.b) + ",\"days\":[";
  for (std::size_t i = 0; i < data.days.size(); ++i) {
    if (i) out += ',';
    out += '[';
    for (std::size_t l = 0; l < data.days[i].size(); ++l) {
      if (l) out += ',';
      out += format_fixed6(data.days[i][l]);
    }
    out += ']';
  }
  out += "]}\n";
  return out;
}

ReplicatedPointData replications_from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("replication file is not valid JSON: ") + e.what());
  }
  try {
    ReplicatedPointData data;
    const auto& unit = doc.at("unit");
    data.unit = unit.is_string() ? unit.get<std::string>() : unit.dump();
    data.a = doc.at("a").get<double>();
    data.b = doc.at("b").get<double>();
    data.days = doc.at("days").get<std::vector<std::vector<double>>>();
    if (doc.contains("n") && doc.at("n").get<int>() != data.n()) {
      throw FormatError("replication count n disagrees with days array");
    }
    for (const auto& d : data.days) {
      if (!std::is_sorted(d.begin(), d.end())) throw FormatError("replication times not sorted");
      for (double t : d) {
        if (t < data.a || t >= data.b) throw FormatError("replication time outside [a, b)");
      }
    }
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed replication document: ") + e.what());
  }
}

ReplicatedPointData load_replications(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return replications_from_json(buf.str());
}

void save_replications(const ReplicatedPointData& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << replications_to_json(data);
}

}  // namespace ppf
