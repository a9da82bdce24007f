#include "xctlab/fiber_table.hpp"

#include <charconv>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "xctlab/error.hpp"
#include "xctlab/volume_io.hpp"

namespace xct {

namespace {

constexpr std::array<ColumnInfo, kFiberColumnCount> kColumns{{
    {"id", "", true},
    {"start_x", "mm", false},
    {"start_y", "mm", false},
    {"start_z", "mm", false},
    {"end_x", "mm", false},
    {"end_y", "mm", false},
    {"end_z", "mm", false},
    {"straight_length", "mm", false},
    {"curved_length", "mm", false},
    {"curvature_ratio", "1", false},
    {"diameter", "mm", false},
    {"surface_area", "mm^2", false},
    {"volume", "mm^3", false},
    {"theta", "deg", false},
    {"phi", "deg", false},
    {"cog_x", "mm", false},
    {"cog_y", "mm", false},
    {"cog_z", "mm", false},
    {"point_count", "", true},
    {"mean_tubularity", "1", false},
}};

std::string valid_names() {
  std::string out;
  for (const auto& c : kColumns) {
    if (!out.empty()) out += ", ";
    out += c.name;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                           : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_real(std::string_view token, std::size_t row, std::string_view column) {
  double v = 0.0;
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, v);
  if (token.empty() || ec != std::errc{} || ptr != end) {
    throw Error(ErrorCode::NumericParse, "row " + std::to_string(row) + ", column " +
                                             std::string(column) + ": '" + std::string(token) + "'");
  }
  return v;
}

std::int64_t parse_integer(std::string_view token, std::size_t row, std::string_view column) {
  const double v = parse_real(token, row, column);
  if (!std::isfinite(v) || v != std::floor(v) || std::abs(v) > 9.0e15) {
    throw Error(ErrorCode::NumericParse, "row " + std::to_string(row) + ", column " +
                                             std::string(column) + ": '" + std::string(token) +
                                             "' is not an integer");
  }
  return static_cast<std::int64_t>(v);
}

void append_real(std::string& out, double v) {
  if (std::isnan(v)) {
    out += "nan";
    return;
  }
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

const std::array<ColumnInfo, kFiberColumnCount>& fiber_columns() { return kColumns; }

std::optional<std::size_t> fiber_column_index(std::string_view name) {
  for (std::size_t i = 0; i < kColumns.size(); ++i) {
    if (kColumns[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t require_fiber_column(std::string_view name) {
  if (const auto idx = fiber_column_index(name)) return *idx;
  throw Error(ErrorCode::UnknownColumn, "'" + std::string(name) + "'; valid columns: " + valid_names());
}

double field_value(const FiberRecord& r, std::size_t column) {
  switch (column) {
    case 0: return static_cast<double>(r.id);
    case 1: return r.start_x;
    case 2: return r.start_y;
    case 3: return r.start_z;
    case 4: return r.end_x;
    case 5: return r.end_y;
    case 6: return r.end_z;
    case 7: return r.straight_length;
    case 8: return r.curved_length;
    case 9: return r.curvature_ratio;
    case 10: return r.diameter;
    case 11: return r.surface_area;
    case 12: return r.volume;
    case 13: return r.theta;
    case 14: return r.phi;
    case 15: return r.cog_x;
    case 16: return r.cog_y;
    case 17: return r.cog_z;
    case 18: return static_cast<double>(r.point_count);
    case 19: return r.mean_tubularity;
    default: break;
  }
  throw Error(ErrorCode::UnknownColumn, "column index " + std::to_string(column));
}

void set_field_value(FiberRecord& r, std::size_t column, double value) {
  switch (column) {
    case 0: r.id = static_cast<std::int64_t>(value); return;
    case 1: r.start_x = value; return;
    case 2: r.start_y = value; return;
    case 3: r.start_z = value; return;
    case 4: r.end_x = value; return;
    case 5: r.end_y = value; return;
    case 6: r.end_z = value; return;
    case 7: r.straight_length = value; return;
    case 8: r.curved_length = value; return;
    case 9: r.curvature_ratio = value; return;
    case 10: r.diameter = value; return;
    case 11: r.surface_area = value; return;
    case 12: r.volume = value; return;
    case 13: r.theta = value; return;
    case 14: r.phi = value; return;
    case 15: r.cog_x = value; return;
    case 16: r.cog_y = value; return;
    case 17: r.cog_z = value; return;
    case 18: r.point_count = static_cast<std::int64_t>(value); return;
    case 19: r.mean_tubularity = value; return;
    default: break;
  }
  throw Error(ErrorCode::UnknownColumn, "column index " + std::to_string(column));
}

void validate_record(const FiberRecord& r) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::InvalidRecord, "fiber " + std::to_string(r.id) + ": " + why);
  };
  if (r.id < 1) fail("id must be >= 1");
  if (r.point_count < 2) fail("point_count must be >= 2");
  const double chord = std::hypot(r.end_x - r.start_x, r.end_y - r.start_y, r.end_z - r.start_z);
  if (std::isfinite(chord) && std::isfinite(r.straight_length) &&
      std::abs(chord - r.straight_length) > 1e-4) {
    fail("straight_length differs from |end - start|");
  }
  if (std::isfinite(r.curved_length) && std::isfinite(r.straight_length) &&
      r.curved_length < r.straight_length * (1.0 - 1e-12)) {
    fail("curved_length < straight_length");
  }
  if (std::isfinite(r.diameter) && !(r.diameter > 0.0)) fail("diameter must be > 0");
  if (std::isfinite(r.volume) && !(r.volume > 0.0)) fail("volume must be > 0");
}

FiberTable::FiberTable(std::vector<FiberRecord> records) {
  records_.reserve(records.size());
  for (auto& r : records) add(std::move(r));
}

void FiberTable::add(FiberRecord record) {
  validate_record(record);
  if (by_id_.contains(record.id)) {
    throw Error(ErrorCode::DuplicateId, "id " + std::to_string(record.id));
  }
  by_id_.emplace(record.id, records_.size());
  records_.push_back(record);
}

ColumnMapping parse_column_mapping(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("column mapping: ") + e.what());
  }
  // {"columns": {...}} or the bare object
  const nlohmann::json& body = doc.is_object() && doc.contains("columns") ? doc["columns"] : doc;
  if (!body.is_object()) throw Error(ErrorCode::InvalidArgument, "column mapping must be a JSON object");
  ColumnMapping mapping;
  for (const auto& [foreign, canonical] : body.items()) {
    if (!canonical.is_string()) {
      throw Error(ErrorCode::InvalidArgument, "column mapping: '" + foreign + "' must map to a column name");
    }
    const auto name = canonical.get<std::string>();
    require_fiber_column(name);
    mapping.emplace(foreign, name);
  }
  return mapping;
}

FiberTable parse_csv(std::string_view text, const ColumnMapping* mapping) {
  std::vector<std::pair<std::size_t, std::string_view>> lines;  // (1-based line number, text)
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    lines.emplace_back(line_no, line);
  }
  if (lines.empty()) throw Error(ErrorCode::HeaderMismatch, "missing header row");

  // Header: map each CSV column to its schema slot.
  const auto header = split_commas(lines.front().second);
  std::vector<std::size_t> slot(header.size());
  std::set<std::size_t> seen;
  std::vector<std::string> extra;
  std::vector<std::string> duplicated;
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::string_view name = header[i];
    if (mapping != nullptr) {
      if (const auto it = mapping->find(name); it != mapping->end()) name = it->second;
    }
    const auto idx = fiber_column_index(name);
    if (!idx) {
      extra.emplace_back(header[i]);
      continue;
    }
    if (!seen.insert(*idx).second) duplicated.emplace_back(name);
    slot[i] = *idx;
  }
  std::vector<std::string> missing;
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    if (!seen.contains(c)) missing.emplace_back(kColumns[c].name);
  }
  if (!extra.empty() || !missing.empty() || !duplicated.empty()) {
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
      return s;
    };
    throw Error(ErrorCode::HeaderMismatch, "missing [" + join(missing) + "], extra [" + join(extra) +
                                               "], duplicated [" + join(duplicated) + "]");
  }

  FiberTable table;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto [row_line, line] = lines[li];
    const auto fields = split_commas(line);
    if (fields.size() != kColumns.size()) {
      throw Error(ErrorCode::RowArity, "row " + std::to_string(li) + " (line " + std::to_string(row_line) +
                                           "): got " + std::to_string(fields.size()) + " fields, expected " +
                                           std::to_string(kColumns.size()));
    }
    FiberRecord r;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const auto& col = kColumns[slot[i]];
      if (col.integral) {
        set_field_value(r, slot[i], static_cast<double>(parse_integer(fields[i], li, col.name)));
      } else {
        set_field_value(r, slot[i], parse_real(fields[i], li, col.name));
      }
    }
    try {
      table.add(r);
    } catch (const Error& e) {
      throw Error(e.code(), "row " + std::to_string(li) + ": " + e.what());
    }
  }
  return table;
}

std::string write_csv(const FiberTable& table) {
  std::string out;
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    if (c > 0) out += ',';
    out += kColumns[c].name;
  }
  out += '\n';
  for (const auto& r : table.records()) {
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
      if (c > 0) out += ',';
      if (c == 0) {
        out += std::to_string(r.id);
      } else if (c == 18) {
        out += std::to_string(r.point_count);
      } else {
        append_real(out, field_value(r, c));
      }
    }
    out += '\n';
  }
  return out;
}

std::vector<double> column(const FiberTable& table, std::string_view name) {
  const std::size_t idx = require_fiber_column(name);
  std::vector<double> values;
  values.reserve(table.size());
  for (const auto& r : table.records()) values.push_back(field_value(r, idx));
  return values;
}

FiberTable load_fiber_table(const std::filesystem::path& path, const ColumnMapping* mapping) {
  return parse_csv(read_file_text(path), mapping);
}

void save_fiber_table(const FiberTable& table, const std::filesystem::path& path) {
  write_file_text(path, write_csv(table));
}

}  // namespace xct
