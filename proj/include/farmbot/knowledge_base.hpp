#pragma once

// The three advisory tables (plant protection, nutrient management, officer
// contacts) loaded from CSV. Keys are trimmed and lowercased at load and at
// query time; lookups are exact on the normalized key.

#include "farmbot/error.hpp"
#include "farmbot/nlu_pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace farmbot::kb {

/// RFC 4180: comma separated, double-quoted fields may hold commas, CRLF and
/// doubled quotes. Accepts LF or CRLF line ends. Returns rows of fields.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text, const std::string& file) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t i = 0;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  while (i < text.size()) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        quoted = false;
      } else {
        field += c;
      }
      ++i;
      continue;
    }
    if (c == '"' && !field_started && field.empty()) {
      quoted = field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      end_row();
      ++i;
    } else if (c == '\n') {
      end_row();
    } else {
      field += c;
      field_started = true;
    }
    ++i;
  }
  if (quoted) throw Error(ErrorCode::InvalidData, file + ": unterminated quoted field");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

/// Number of UTF-8 code points.
inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

inline std::string normalize_key(std::string_view s) { return nlu::to_lower(nlu::trim(s)); }

struct OfficerContact {
  std::string phone;
  std::string mail;

  bool operator==(const OfficerContact&) const = default;
};

using Key = std::pair<std::string, std::string>;

class KnowledgeBase {
 public:
  std::map<Key, std::string> plant_protection;
  std::map<Key, std::string> nutrient;
  std::map<Key, OfficerContact> officers;

  bool operator==(const KnowledgeBase&) const = default;

  std::optional<std::string> query_plant_protection(std::string_view crop, std::string_view disease) const {
    return find(plant_protection, crop, disease);
  }
  std::optional<std::string> query_nutrient(std::string_view crop, std::string_view nutrient_name) const {
    return find(nutrient, crop, nutrient_name);
  }
  std::optional<OfficerContact> query_officer(std::string_view role, std::string_view city) const {
    return find(officers, role, city);
  }

 private:
  template <typename V>
  static std::optional<V> find(const std::map<Key, V>& table, std::string_view a, std::string_view b) {
    auto it = table.find({normalize_key(a), normalize_key(b)});
    if (it == table.end()) return std::nullopt;
    return it->second;
  }
};

struct Column {
  const char* name;
  std::size_t max_length;
  bool required;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "missing knowledge-base file " + p.filename().string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// (row number, fields) after the header, validated against `columns`. Row
/// numbers are 1-based data rows.
inline std::vector<std::pair<long, std::vector<std::string>>> read_table(const std::filesystem::path& path, const std::vector<Column>& columns) {
  const std::string name = path.filename().string();
  std::string text = read_file(path);
  if (text.rfind("\xEF\xBB\xBF", 0) == 0) text.erase(0, 3);
  auto rows = parse_csv(text, name);
  std::vector<std::string> expected;
  for (const auto& c : columns) expected.emplace_back(c.name);
  if (rows.empty() || rows.front() != expected) {
    std::string want;
    for (const auto& c : expected) want += (want.empty() ? "" : ",") + c;
    throw Error(ErrorCode::BadHeader, name + ": header must be exactly " + want);
  }
  std::vector<std::pair<long, std::vector<std::string>>> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    auto& row = rows[r];
    if (row.size() == 1 && nlu::trim(row[0]).empty()) continue;  // blank line
    const long row_no = static_cast<long>(r);
    if (row.size() != columns.size()) {
      throw Error(ErrorCode::InvalidData,
                  name + " row " + std::to_string(row_no) + ": expected " + std::to_string(columns.size()) + " fields", row_no);
    }
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (utf8_length(row[c]) > columns[c].max_length) {
        throw Error(ErrorCode::FieldTooLong,
                    name + " row " + std::to_string(row_no) + " field " + columns[c].name + ": longer than " +
                        std::to_string(columns[c].max_length) + " characters",
                    row_no);
      }
      if (columns[c].required && nlu::trim(row[c]).empty()) {
        throw Error(ErrorCode::InvalidData, name + " row " + std::to_string(row_no) + " field " + columns[c].name + " is empty",
                    row_no);
      }
    }
    out.emplace_back(row_no, std::move(row));
  }
  return out;
}

template <typename V>
void insert_unique(std::map<Key, V>& table, Key key, V value, const std::string& file, long row_no) {
  if (!table.emplace(std::move(key), std::move(value)).second) {
    throw Error(ErrorCode::DuplicateKey, file + " row " + std::to_string(row_no) + ": duplicate key", row_no);
  }
}

}  // namespace detail

inline constexpr const char* kPlantProtectionFile = "plant_protection.csv";
inline constexpr const char* kNutrientFile = "nutrient.csv";
inline constexpr const char* kOfficersFile = "officers.csv";

inline KnowledgeBase load_kb(const std::filesystem::path& dir) {
  KnowledgeBase kb;
  {
    auto rows = detail::read_table(dir / kPlantProtectionFile, {{"crop", 30, true}, {"disease", 60, true}, {"remedy", 255, true}});
    for (const auto& [n, r] : rows) {
      detail::insert_unique(kb.plant_protection, {normalize_key(r[0]), normalize_key(r[1])}, r[2], kPlantProtectionFile, n);
    }
  }
  {
    auto rows = detail::read_table(dir / kNutrientFile, {{"crop", 30, true}, {"nutrient", 60, true}, {"remedy", 255, true}});
    for (const auto& [n, r] : rows) {
      detail::insert_unique(kb.nutrient, {normalize_key(r[0]), normalize_key(r[1])}, r[2], kNutrientFile, n);
    }
  }
  {
    auto rows = detail::read_table(dir / kOfficersFile,
                                   {{"role", 50, true}, {"city", 30, true}, {"phone", 38, true}, {"mail", 50, false}});
    for (const auto& [n, r] : rows) {
      detail::insert_unique(kb.officers, {normalize_key(r[0]), normalize_key(r[1])}, OfficerContact{r[2], r[3]}, kOfficersFile, n);
    }
  }
  return kb;
}

}  // namespace farmbot::kb
