#pragma once

// Text to features: whitespace tokenisation, char_wb n-gram and word count
// vectors, lexical-syntactic window features, regex flags, and optional dense
// vectors from a pretrained embedding table. Every featurizer emits one row
// per token plus a trailing sentence (CLS) row.

#include "farmbot/error.hpp"
#include "farmbot/tensor.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace farmbot::nlu {

/// Offsets are byte offsets into the UTF-8 message text, [start, end).
struct Token {
  std::string text;
  std::string lower;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const Token& o) const { return text == o.text && start == o.start && end == o.end; }
};

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

/// Maximal runs of non-whitespace characters.
inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i >= text.size()) break;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    Token t;
    t.text = std::string(text.substr(start, i - start));
    t.lower = to_lower(t.text);
    t.start = start;
    t.end = i;
    tokens.push_back(std::move(t));
  }
  return tokens;
}

/// Which featurizers run, and the char n-gram range.
struct FeaturizerConfig {
  bool char_ngrams = true;
  bool word_counts = true;
  bool lexical_syntactic = true;
  bool regex = true;
  std::size_t min_ngram = 1;
  std::size_t max_ngram = 4;

  nlohmann::json to_json() const {
    return {{"char_ngrams", char_ngrams}, {"word_counts", word_counts}, {"lexical_syntactic", lexical_syntactic},
            {"regex", regex}, {"min_ngram", min_ngram}, {"max_ngram", max_ngram}};
  }
  static FeaturizerConfig from_json(const nlohmann::json& j) {
    FeaturizerConfig c;
    c.char_ngrams = j.value("char_ngrams", c.char_ngrams);
    c.word_counts = j.value("word_counts", c.word_counts);
    c.lexical_syntactic = j.value("lexical_syntactic", c.lexical_syntactic);
    c.regex = j.value("regex", c.regex);
    c.min_ngram = j.value("min_ngram", c.min_ngram);
    c.max_ngram = j.value("max_ngram", c.max_ngram);
    if (c.min_ngram < 1 || c.max_ngram < c.min_ngram) throw Error(ErrorCode::InvalidConfig, "bad n-gram range");
    return c;
  }
};

struct RegexPattern {
  std::string name;
  std::string pattern;
};

/// All contiguous substrings of " token " with length in [lo, hi], in
/// order of occurrence (duplicates kept).
inline std::vector<std::string> char_wb_ngrams(std::string_view lower_token, std::size_t lo, std::size_t hi) {
  const std::string padded = " " + std::string(lower_token) + " ";
  std::vector<std::string> out;
  for (std::size_t n = lo; n <= hi; ++n) {
    if (n > padded.size()) break;
    for (std::size_t i = 0; i + n <= padded.size(); ++i) out.push_back(padded.substr(i, n));
  }
  return out;
}

// ---- lexical-syntactic ------------------------------------------------------

inline constexpr std::size_t kAffixBuckets = 64;

/// 64-bit FNV-1a. Affix features land in bucket fnv1a(affix) % 64.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class LexicalLayout {
 public:
  static constexpr const char* kPositions[3] = {"prev", "cur", "next"};
  static constexpr const char* kFlags[5] = {"upper", "digits", "lower", "first", "last"};

  LexicalLayout() {
    std::size_t col = 0;
    for (const char* pos : kPositions) {
      for (const char* f : kFlags) index_[std::string(pos) + ":" + f] = col++;
      for (std::size_t b = 0; b < kAffixBuckets; ++b) index_[std::string(pos) + ":prefix2:" + std::to_string(b)] = col++;
      for (std::size_t b = 0; b < kAffixBuckets; ++b) index_[std::string(pos) + ":suffix2:" + std::to_string(b)] = col++;
    }
    width_ = col;
  }

  std::size_t width() const { return width_; }
  std::size_t column(const std::string& name) const { return index_.at(name); }
  const std::map<std::string, std::size_t>& index() const { return index_; }

 private:
  std::map<std::string, std::size_t> index_;
  std::size_t width_ = 0;
};

inline const LexicalLayout& lexical_layout() {
  static const LexicalLayout layout;
  return layout;
}

// ---- fitted state -------------------------------------------------------------

/// Vocabularies and patterns fixed at fit time. Immutable afterwards.
class FeaturizerState {
 public:
  FeaturizerConfig config;
  std::map<std::string, std::size_t> char_ngram_vocabulary;
  std::map<std::string, std::size_t> word_vocabulary;
  std::vector<RegexPattern> regex_patterns;

  std::size_t count_width() const {
    return (config.char_ngrams ? char_ngram_vocabulary.size() : 0) + (config.word_counts ? word_vocabulary.size() : 0);
  }
  std::size_t lexical_width() const { return config.lexical_syntactic ? lexical_layout().width() : 0; }
  std::size_t regex_width() const { return config.regex ? regex_patterns.size() : 0; }
  std::size_t sparse_width() const { return count_width() + lexical_width() + regex_width(); }

  const std::map<std::string, std::size_t>& lexical_feature_index() const { return lexical_layout().index(); }

  const std::vector<std::regex>& compiled() const { return compiled_; }

  void compile() {
    compiled_.clear();
    for (const auto& p : regex_patterns) {
      try {
        compiled_.emplace_back(p.pattern, std::regex::ECMAScript);
      } catch (const std::regex_error& e) {
        throw Error(ErrorCode::InvalidPattern, "pattern '" + p.name + "': " + e.what());
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = config.to_json();
    // Column indices follow lexicographic order, so the sorted key lists
    // reproduce the maps exactly.
    std::vector<std::string> chars, words;
    for (const auto& [k, v] : char_ngram_vocabulary) chars.push_back(k);
    for (const auto& [k, v] : word_vocabulary) words.push_back(k);
    j["char_ngram_vocabulary"] = chars;
    j["word_vocabulary"] = words;
    j["regex_patterns"] = nlohmann::json::array();
    for (const auto& p : regex_patterns) j["regex_patterns"].push_back({{"name", p.name}, {"pattern", p.pattern}});
    return j;
  }

  static FeaturizerState from_json(const nlohmann::json& j) {
    FeaturizerState s;
    s.config = FeaturizerConfig::from_json(j.at("config"));
    std::size_t i = 0;
    for (const auto& k : j.at("char_ngram_vocabulary")) s.char_ngram_vocabulary[k.get<std::string>()] = i++;
    i = 0;
    for (const auto& k : j.at("word_vocabulary")) s.word_vocabulary[k.get<std::string>()] = i++;
    for (const auto& p : j.at("regex_patterns")) s.regex_patterns.push_back({p.at("name"), p.at("pattern")});
    s.compile();
    return s;
  }

 private:
  std::vector<std::regex> compiled_;
};

inline FeaturizerState fit_featurizers(const std::vector<std::string>& texts, const FeaturizerConfig& config,
                                       const std::vector<RegexPattern>& patterns) {
  if (texts.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training examples to fit featurizers");
  std::set<std::string> grams, words;
  for (const auto& text : texts) {
    for (const auto& tok : tokenize(text)) {
      words.insert(tok.lower);
      for (auto& g : char_wb_ngrams(tok.lower, config.min_ngram, config.max_ngram)) grams.insert(std::move(g));
    }
  }
  FeaturizerState s;
  s.config = config;
  std::size_t i = 0;
  for (const auto& g : grams) s.char_ngram_vocabulary[g] = i++;
  i = 0;
  for (const auto& w : words) s.word_vocabulary[w] = i++;
  s.regex_patterns = patterns;
  s.compile();
  return s;
}

// ---- featurizers --------------------------------------------------------------

/// Char n-gram counts then one-hot word identity; CLS row is the column sum.
inline SparseMatrix featurize_count_vectors(const std::vector<Token>& tokens, const FeaturizerState& state) {
  const std::size_t n = tokens.size();
  const std::size_t char_width = state.config.char_ngrams ? state.char_ngram_vocabulary.size() : 0;
  SparseMatrix m(n + 1, state.count_width());
  for (std::size_t r = 0; r < n; ++r) {
    if (state.config.char_ngrams) {
      for (const auto& g : char_wb_ngrams(tokens[r].lower, state.config.min_ngram, state.config.max_ngram)) {
        auto it = state.char_ngram_vocabulary.find(g);
        if (it != state.char_ngram_vocabulary.end()) m.add(r, it->second, 1.0);
      }
    }
    if (state.config.word_counts) {
      auto it = state.word_vocabulary.find(tokens[r].lower);
      if (it != state.word_vocabulary.end()) m.add(r, char_width + it->second, 1.0);
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (const auto& e : m.rows[r]) m.add(n, e.col, e.value);
  }
  return m;
}

inline SparseMatrix featurize_lexical_syntactic(const std::vector<Token>& tokens) {
  const auto& layout = lexical_layout();
  const std::size_t n = tokens.size();
  SparseMatrix m(n + 1, layout.width());
  auto set_for = [&](std::size_t row, std::size_t tok, const std::string& pos) {
    const Token& t = tokens[tok];
    const bool upper = !t.text.empty() && std::isupper(static_cast<unsigned char>(t.text[0]));
    const bool digits = std::all_of(t.text.begin(), t.text.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
    const bool lower = std::none_of(t.text.begin(), t.text.end(), [](char c) { return std::isupper(static_cast<unsigned char>(c)); }) &&
                       std::any_of(t.text.begin(), t.text.end(), [](char c) { return std::islower(static_cast<unsigned char>(c)); });
    if (upper) m.add(row, layout.column(pos + ":upper"), 1.0);
    if (digits) m.add(row, layout.column(pos + ":digits"), 1.0);
    if (lower) m.add(row, layout.column(pos + ":lower"), 1.0);
    if (tok == 0) m.add(row, layout.column(pos + ":first"), 1.0);
    if (tok + 1 == n) m.add(row, layout.column(pos + ":last"), 1.0);
    const std::string prefix = t.lower.substr(0, 2);
    const std::string suffix = t.lower.size() >= 2 ? t.lower.substr(t.lower.size() - 2) : t.lower;
    m.add(row, layout.column(pos + ":prefix2:" + std::to_string(fnv1a(prefix) % kAffixBuckets)), 1.0);
    m.add(row, layout.column(pos + ":suffix2:" + std::to_string(fnv1a(suffix) % kAffixBuckets)), 1.0);
  };
  for (std::size_t r = 0; r < n; ++r) {
    if (r > 0) set_for(r, r - 1, "prev");
    set_for(r, r, "cur");
    if (r + 1 < n) set_for(r, r + 1, "next");
  }
  return m;
}

/// One binary column per pattern: set when the token's span overlaps a
/// match in the original text. CLS row is the OR over tokens.
inline SparseMatrix featurize_regex(std::string_view text, const std::vector<Token>& tokens, const FeaturizerState& state) {
  const std::size_t n = tokens.size();
  SparseMatrix m(n + 1, state.regex_width());
  if (!state.config.regex) return m;
  const std::string owned(text);
  for (std::size_t p = 0; p < state.compiled().size(); ++p) {
    for (auto it = std::sregex_iterator(owned.begin(), owned.end(), state.compiled()[p]); it != std::sregex_iterator(); ++it) {
      const std::size_t ms = static_cast<std::size_t>(it->position());
      const std::size_t me = ms + static_cast<std::size_t>(it->length());
      if (me == ms) continue;
      for (std::size_t r = 0; r < n; ++r) {
        if (tokens[r].start < me && ms < tokens[r].end && m.at(r, p) == 0.0) {
          m.add(r, p, 1.0);
          if (m.at(n, p) == 0.0) m.add(n, p, 1.0);
        }
      }
    }
  }
  return m;
}

// ---- dense path -----------------------------------------------------------------

enum class Pooling { Mean, Max };

inline Pooling pooling_from_string(const std::string& s) {
  if (s == "mean") return Pooling::Mean;
  if (s == "max") return Pooling::Max;
  throw Error(ErrorCode::InvalidConfig, "unknown pooling '" + s + "'");
}

inline const char* to_string(Pooling p) { return p == Pooling::Mean ? "mean" : "max"; }

struct EmbeddingTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::vector<double>> vectors;
  // How the CLS row summarizes the token rows.
  Pooling pooling = Pooling::Mean;
};

/// Parses `token v1 ... vd` lines. Blank lines are skipped; a later
/// duplicate token replaces an earlier one.
inline EmbeddingTable parse_embedding_table(std::istream& in) {
  EmbeddingTable table;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream fields(line);
    std::string token, field;
    fields >> token;
    std::vector<double> v;
    while (fields >> field) {
      double x = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), x);
      if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw Error(ErrorCode::MalformedLine, "bad number '" + field + "' on line " + std::to_string(line_no), line_no);
      }
      v.push_back(x);
    }
    if (v.empty()) throw Error(ErrorCode::MalformedLine, "no vector on line " + std::to_string(line_no), line_no);
    if (table.dim == 0) {
      table.dim = v.size();
    } else if (v.size() != table.dim) {
      throw Error(ErrorCode::InconsistentDimension, "line " + std::to_string(line_no) + " has " + std::to_string(v.size()) +
                                                        " values, expected " + std::to_string(table.dim), line_no);
    }
    table.vectors[token] = std::move(v);
  }
  if (table.vectors.empty()) throw Error(ErrorCode::EmptyFile, "embedding table is empty");
  return table;
}

inline EmbeddingTable load_embedding_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open embedding table " + path);
  return parse_embedding_table(in);
}

/// Token rows are table lookups of the lowercased token (zero if absent);
/// the CLS row pools them per `table.pooling`.
inline Matrix featurize_dense(const std::vector<Token>& tokens, const EmbeddingTable& table) {
  const auto n = static_cast<Eigen::Index>(tokens.size());
  Matrix m = Matrix::Zero(n + 1, static_cast<Eigen::Index>(table.dim));
  for (Eigen::Index r = 0; r < n; ++r) {
    auto it = table.vectors.find(tokens[r].lower);
    if (it == table.vectors.end()) continue;
    for (std::size_t c = 0; c < table.dim; ++c) m(r, c) = it->second[c];
  }
  if (n > 0) {
    if (table.pooling == Pooling::Mean) {
      m.row(n) = m.topRows(n).colwise().mean();
    } else {
      m.row(n) = m.topRows(n).colwise().maxCoeff();
    }
  }
  return m;
}

// ---- assembly -----------------------------------------------------------------

struct MessageFeatures {
  std::shared_ptr<const SparseMatrix> sparse;
  std::vector<std::size_t> block_offsets;
  std::optional<Matrix> dense;

  std::size_t rows() const { return sparse->row_count(); }
  std::size_t token_count() const { return rows() - 1; }
};

inline MessageFeatures assemble_features(const std::vector<SparseMatrix>& blocks, std::optional<Matrix> dense) {
  if (blocks.empty()) throw Error(ErrorCode::RowCountMismatch, "no sparse blocks");
  const std::size_t rows = blocks.front().row_count();
  auto combined = std::make_shared<SparseMatrix>(rows, 0);
  MessageFeatures f;
  std::size_t offset = 0;
  for (const auto& b : blocks) {
    if (b.row_count() != rows) throw Error(ErrorCode::RowCountMismatch, "sparse blocks disagree on row count");
    f.block_offsets.push_back(offset);
    for (std::size_t r = 0; r < rows; ++r) {
      for (const auto& e : b.rows[r]) combined->rows[r].push_back({offset + e.col, e.value});
    }
    offset += b.cols;
  }
  combined->cols = offset;
  if (dense && static_cast<std::size_t>(dense->rows()) != rows) {
    throw Error(ErrorCode::RowCountMismatch, "dense rows disagree with sparse rows");
  }
  f.sparse = std::move(combined);
  f.dense = std::move(dense);
  return f;
}

/// Runs every enabled featurizer on `text`.
inline MessageFeatures featurize(std::string_view text, const std::vector<Token>& tokens, const FeaturizerState& state,
                                 const EmbeddingTable* table) {
  std::vector<SparseMatrix> blocks;
  blocks.push_back(featurize_count_vectors(tokens, state));
  if (state.config.lexical_syntactic) blocks.push_back(featurize_lexical_syntactic(tokens));
  if (state.config.regex) blocks.push_back(featurize_regex(text, tokens, state));
  std::optional<Matrix> dense;
  if (table) dense = featurize_dense(tokens, *table);
  return assemble_features(blocks, std::move(dense));
}

}  // namespace farmbot::nlu
