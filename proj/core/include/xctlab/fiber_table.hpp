#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xct {

/// One fiber with the 20 characteristics of CSV schema v1. Lengths in mm,
/// angles in degrees. theta is the angle to the z axis in [0, 90]; phi is the
/// azimuth of the axis projected on the xy plane in [0, 360).
struct FiberRecord {
  std::int64_t id = 0;
  double start_x = 0, start_y = 0, start_z = 0;
  double end_x = 0, end_y = 0, end_z = 0;
  double straight_length = 0;
  double curved_length = 0;
  double curvature_ratio = 1;
  double diameter = 0;
  double surface_area = 0;
  double volume = 0;
  double theta = 0;
  double phi = 0;
  double cog_x = 0, cog_y = 0, cog_z = 0;
  std::int64_t point_count = 2;
  double mean_tubularity = 0;

  friend bool operator==(const FiberRecord&, const FiberRecord&) = default;
};

struct ColumnInfo {
  std::string_view name;
  std::string_view unit;
  bool integral;
};

inline constexpr std::size_t kFiberColumnCount = 20;

/// Schema v1 column order. Frozen: consumers address columns by these names.
const std::array<ColumnInfo, kFiberColumnCount>& fiber_columns();

/// Column index for a schema v1 name, or nullopt.
std::optional<std::size_t> fiber_column_index(std::string_view name);
/// Throws UnknownColumn listing the valid names.
std::size_t require_fiber_column(std::string_view name);

double field_value(const FiberRecord& r, std::size_t column);
void set_field_value(FiberRecord& r, std::size_t column, double value);

/// Checks the record invariants; throws InvalidRecord with the violated rule.
/// Non-finite fields are treated as missing and skip the checks they feed.
void validate_record(const FiberRecord& r);

class FiberTable {
 public:
  FiberTable() = default;
  explicit FiberTable(std::vector<FiberRecord> records);

  /// Appends after validation; DuplicateId when the id is taken.
  void add(FiberRecord record);

  [[nodiscard]] const std::vector<FiberRecord>& records() const { return records_; }
  [[nodiscard]] std::size_t size() const { return records_.size(); }
  [[nodiscard]] bool empty() const { return records_.empty(); }

  friend bool operator==(const FiberTable& a, const FiberTable& b) { return a.records_ == b.records_; }

 private:
  std::vector<FiberRecord> records_;
  std::map<std::int64_t, std::size_t> by_id_;
};

/// Maps foreign header names (e.g. from another characterization tool) onto
/// schema v1 names before the header is checked.
using ColumnMapping = std::map<std::string, std::string, std::less<>>;

/// {"columns": {"Foreign Name": "schema_name", ...}} (the bare inner object is accepted too).
ColumnMapping parse_column_mapping(std::string_view json_text);

/// Parses schema v1 CSV. Lines whose first non-blank character is '#' (e.g.
/// "# unit: ..." annotations) and blank lines are skipped. Header columns may
/// appear in any order but must be exactly the schema set.
FiberTable parse_csv(std::string_view text, const ColumnMapping* mapping = nullptr);

/// Serializes in schema order. Reals use the shortest representation that
/// parses back to the identical double, so parse_csv(write_csv(t)) == t.
std::string write_csv(const FiberTable& table);

std::vector<double> column(const FiberTable& table, std::string_view name);

FiberTable load_fiber_table(const std::filesystem::path& path, const ColumnMapping* mapping = nullptr);
void save_fiber_table(const FiberTable& table, const std::filesystem::path& path);

}  // namespace xct
